#pragma once

#include <cstdint>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse::losses {

// Which modality subset a conventional-dropout iteration supervises.
enum class ModalitySubset { ImageOnly, TabularOnly, Both };

enum class DropoutKind { None, Conventional, Simultaneous };

struct DropoutPolicy {
    DropoutKind kind = DropoutKind::Simultaneous;
    double lambda = 1.0;            // unimodal term weight, >= 0
    std::uint64_t sampler_seed = 0; // 0 = derive from the run seed
};

// Per-batch uniform subset sampler for conventional modality dropout: one
// draw from {image}, {tabular}, {image, tabular} per iteration.
class SubsetSampler {
public:
    explicit SubsetSampler(std::uint64_t seed) : gen_(seed) {}
    ModalitySubset draw();

private:
    rng::Xoshiro256pp gen_;
};

// +1/-1 pair labels: positive iff the two samples share a class label.
// Symmetric with +1 diagonal.
ad::Tensor pair_labeling(const std::vector<int>& labels);

// Mean binary cross-entropy over the batch, stable log-sum-exp form:
// mean(softplus(logit) - y * logit).
ad::Var loss_base(ad::Graph& g, ad::Var logits, ad::Var y);

// Full-path convenience: forward in the given mode, then loss_base.
ad::Var loss_base_mode(ad::Graph& g, const model::BoundModel& m, ad::Var x_image,
                       ad::Var x_tabular, ad::Var y, model::InferenceMode mode,
                       model::TokenPolicy policy);

// Conventional modality dropout: one sampled subset per batch.
ad::Var loss_md(ad::Graph& g, const model::BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                ad::Var y, SubsetSampler& sampler, model::TokenPolicy policy);

// Same with the subset forced (tests, and the sampler-equivalence checks).
ad::Var loss_md_subset(ad::Graph& g, const model::BoundModel& m, ad::Var x_image,
                       ad::Var x_tabular, ad::Var y, ModalitySubset subset,
                       model::TokenPolicy policy);

// Simultaneous modality dropout: the multimodal term plus lambda times both
// unimodal terms, all in one graph so one backward accumulates everything.
ad::Var loss_smd(ad::Graph& g, const model::BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                 ad::Var y, double lambda, model::TokenPolicy policy);

// Pairwise sigmoid contrastive loss between two representation batches:
// sum over all n^2 pairs of softplus(a(u,v) * (-t <z_i^u, z_j^v> + b)).
// Returned raw (unnormalized); the summation order is transpose-invariant,
// so swapping z_i and z_j reproduces the value bit for bit.
ad::Var loss_con_pair(ad::Graph& g, ad::Var z_i, ad::Var z_j, const ad::Tensor& pair_labels,
                      ad::Var t, ad::Var b);

// Conventional contrastive loss: the single image-tabular pairwise term.
ad::Var loss_con(ad::Graph& g, ad::Var z_image, ad::Var z_tabular, const ad::Tensor& pair_labels,
                 ad::Var t, ad::Var b);

// Extended contrastive loss: image-tabular + image-fused + tabular-fused
// pairwise terms with a single shared scale and bias.
ad::Var loss_con_hat(ad::Graph& g, ad::Var z_image, ad::Var z_tabular, ad::Var z_fused,
                     const ad::Tensor& pair_labels, ad::Var t, ad::Var b);

} // namespace mmfuse::losses
