#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse::model {

// Which modalities are present at inference time.
enum class InferenceMode { Both, ImageOnly, TabularOnly };

// How an absent modality block is filled at the fusion input.
enum class TokenPolicy { LearnedToken, ZeroMatrix };

const char* to_string(InferenceMode mode);
const char* to_string(TokenPolicy policy);

// All learnable state. Tokens start at zero so training begins exactly at
// the conventional zero-fill behavior; the contrastive scale is carried as
// a log so t = exp(log_scale) stays positive.
struct ModelParams {
    ad::Tensor token_image;   // 1 x dim_c
    ad::Tensor token_tabular; // 1 x dim_t
    ad::Tensor fuse_weight;   // (dim_c + dim_t) x d_f
    ad::Tensor fuse_bias;     // 1 x d_f
    ad::Tensor head_weight;   // d_f x 1
    ad::Tensor head_bias;     // 1 x 1
    ad::Tensor proj_weight;   // d_f x d_p
    ad::Tensor proj_bias;     // 1 x d_p
    ad::Tensor log_scale;     // 1 x 1, contrastive t = exp(log_scale)
    ad::Tensor con_bias;      // 1 x 1, contrastive b

    std::size_t dim_image() const { return token_image.cols; }
    std::size_t dim_tabular() const { return token_tabular.cols; }
    std::size_t d_fuse() const { return fuse_weight.cols; }
    std::size_t d_proj() const { return proj_weight.cols; }

    struct Named {
        std::string name;
        ad::Tensor* tensor;
        bool weight_decay; // decoupled decay applies only to weight matrices
    };
    std::vector<Named> named();
    std::vector<std::pair<std::string, const ad::Tensor*>> named_const() const;
};

// Xavier-uniform weights, zero biases and tokens, t = 10, b = -10.
ModelParams init_params(std::size_t dim_image, std::size_t dim_tabular, std::size_t d_fuse,
                        std::size_t d_proj, std::uint64_t seed);

// Re-initializes only the classifier head (fresh stream from seed).
void reinit_head(ModelParams& params, std::uint64_t seed);

// Model parameters bound into a graph as leaves. One binding per graph.
struct BoundModel {
    ad::Var token_image, token_tabular;
    ad::Var fuse_w, fuse_b;
    ad::Var head_w, head_b;
    ad::Var proj_w, proj_b;
    ad::Var log_scale, con_bias;
    std::size_t dim_image = 0, dim_tabular = 0;

    static BoundModel bind(ad::Graph& g, ModelParams& params);
};

// relu(concat(block_image, block_tabular) . W + b): the one-layer fusion MLP.
ad::Var fuse(ad::Graph& g, const BoundModel& m, ad::Var block_image, ad::Var block_tabular);

// Fill for an absent modality: broadcast learned token or zero matrix.
ad::Var modality_fill(ad::Graph& g, const BoundModel& m, bool image_side, std::size_t n_rows,
                      TokenPolicy policy);

// Logits for the requested mode. Absent inputs may be omitted (pass nullptr)
// when the mode does not need them; a missing required modality is a
// contract error.
ad::Var forward_logit(ad::Graph& g, const BoundModel& m, const ad::Tensor* x_image,
                      const ad::Tensor* x_tabular, InferenceMode mode, TokenPolicy policy);

// Same but over already-inserted graph vars (used to share input nodes
// between the three forwards of the simultaneous-dropout loss).
ad::Var forward_logit_vars(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                           InferenceMode mode, TokenPolicy policy);

enum class ReprKind { Image, Tabular, Fused };

// Row-normalized projection of the fused representation; unimodal variants
// are produced through the fusion module with the other block token-filled.
ad::Var forward_repr(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                     ReprKind which);

// Convenience inference path: P(y=1) per row.
std::vector<double> predict_proba(ModelParams& params, const ad::Tensor& x_image,
                                  const ad::Tensor& x_tabular, InferenceMode mode,
                                  TokenPolicy policy);

// MMF1 checkpoint: magic, u32 JSON header length, JSON header (dims plus a
// named tensor index with absolute byte offsets), then raw little-endian f64
// tensor payloads. `meta_json` is carried verbatim in the header.
void save_model(const ModelParams& params, const std::string& meta_json,
                const std::filesystem::path& path);

struct LoadedModel {
    ModelParams params;
    std::string meta_json;
};

LoadedModel load_model(const std::filesystem::path& path);

// Random access into a checkpoint: reads a single named tensor using the
// header offsets only.
ad::Tensor load_model_tensor(const std::filesystem::path& path, const std::string& name);

} // namespace mmfuse::model
