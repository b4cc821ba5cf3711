#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse::data {

struct SampleInfo {
    std::string sample_id;
    std::string patient_id;
    int label = 0; // binary task: 0 or 1
};

// In-memory dataset: sample manifest plus one embedding matrix per modality,
// the stand-in for frozen encoder outputs. Row i of each matrix belongs to
// samples[i]. Immutable after load; safe for concurrent reads.
struct Dataset {
    std::vector<SampleInfo> samples;
    ad::Tensor image;   // n x dim_c
    ad::Tensor tabular; // n x dim_t
    // Free-form provenance carried through manifest round-trips (JSON text,
    // empty when absent).
    std::string provenance_json;

    std::size_t size() const { return samples.size(); }
    std::size_t dim_image() const { return image.cols; }
    std::size_t dim_tabular() const { return tabular.cols; }

    std::optional<std::size_t> index_of(const std::string& sample_id) const;
};

struct SynthConfig {
    std::size_t n_patients = 200;
    std::size_t samples_per_patient = 1;
    std::size_t latent_dim = 8;
    std::size_t dim_image = 32;
    std::size_t dim_tabular = 16;
    double sigma_image = 2.0;
    double sigma_tabular = 1.0;
    double label_noise = 0.05; // flip probability, in [0, 0.5)
    std::uint64_t seed = 1;

    void validate() const; // throws ConfigError
};

struct FoldSplit {
    int fold_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

// One training batch: gathered embedding rows, labels both as an n x 1
// tensor (for graph building) and as raw ints (for pair labeling).
struct Batch {
    ad::Tensor x_image;
    ad::Tensor x_tabular;
    ad::Tensor y;
    std::vector<int> labels;
};

// Reads manifest.json plus the EMB1 files it references. Throws FormatError
// on malformed files or shape mismatches and ConsistencyError when rows do
// not line up with the manifest.
Dataset read_dataset(const std::filesystem::path& dir);

// Writes manifest.json, image.emb and tabular.emb (f64 payloads). Writing
// then reading yields an equal dataset; output bytes are deterministic.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Deterministic synthetic multimodal data. Each patient draws one latent
// vector; the label is the sign of its first coordinate (optionally flipped
// with probability label_noise); each sample projects the latent through
// fixed random matrices plus per-modality Gaussian noise.
Dataset synth_generate(const SynthConfig& cfg);

// Patient-level four-fold splitting: patients are shuffled once, dealt
// round-robin into folds; fold f's patients are its test set, the first
// ceil(val_frac * remaining) patients of the shuffle order are validation,
// the rest train. No patient appears in two partitions.
std::vector<FoldSplit> split_folds(const Dataset& ds, std::size_t n_folds, double val_frac,
                                   std::uint64_t seed);

// Per-epoch shuffled batches over the given sample ids; the shuffle is keyed
// by (shuffle_seed, epoch) and the final partial batch is kept.
std::vector<Batch> make_batches(const Dataset& ds, const std::vector<std::string>& ids,
                                std::size_t batch_size, std::uint64_t shuffle_seed,
                                std::uint64_t epoch);

// Gathers the rows for a fixed id list in list order (no shuffling).
Batch gather(const Dataset& ds, const std::vector<std::string>& ids);

// Keeps only the first k tabular columns; convenience stand-in for upstream
// attribute selection.
Dataset truncate_tabular(const Dataset& ds, std::size_t k);

// Raw EMB1 matrix I/O (exposed for tests and tooling).
void write_embedding_file(const std::filesystem::path& path, const ad::Tensor& m);
ad::Tensor read_embedding_file(const std::filesystem::path& path);

} // namespace mmfuse::data
