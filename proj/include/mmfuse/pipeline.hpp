#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/losses.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse::pipeline {

inline constexpr const char* kEngineVersion = "0.1.0";

enum class PretrainLoss { None, Con, ConHat };
enum class ConNorm { Raw, Mean };

const char* to_string(PretrainLoss v);
const char* to_string(ConNorm v);

// All run hyperparameters. Serialized canonically so the config hash pins a
// run's full provenance.
struct TrainConfig {
    losses::DropoutPolicy dropout;
    model::TokenPolicy token_policy = model::TokenPolicy::LearnedToken;
    PretrainLoss pretrain_loss = PretrainLoss::None;
    std::size_t pretrain_epochs = 50;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    std::size_t d_fuse = 64;
    std::size_t d_proj = 32;
    std::uint64_t seed = 1;
    ConNorm con_norm = ConNorm::Mean;

    void validate() const;
    std::string to_json(int indent = -1) const;
    // Strict parse: unknown keys are collected and rejected together.
    static TrainConfig from_json_text(const std::string& text);
    // FNV-1a over the canonical JSON, as 16 hex digits.
    std::string hash() const;
};

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::vector<std::pair<std::string, std::optional<double>>> val_auroc; // per mode
};

struct RunRecord {
    std::vector<EpochStat> epochs;
    std::vector<double> batch_losses; // per-step loss sequence, insertion order
    std::size_t best_epoch = 0;
    double best_val_auroc = 0.0;
};

// Line-oriented JSON event sink; one event per line when non-null.
using EventLog = std::ostream;

// Contrastive pretraining over the fold's training ids. Returns the final
// parameters (no model selection; pretraining carries no classification
// signal). With pretrain_loss == None the input is returned unchanged.
model::ModelParams pretrain(const data::Dataset& ds, const data::FoldSplit& split,
                            const TrainConfig& cfg, model::ModelParams params,
                            std::vector<double>* epoch_losses = nullptr,
                            EventLog* log = nullptr);

struct TargetResult {
    model::ModelParams params; // best validation-AUROC checkpoint
    RunRecord record;
};

// Target-task training with the configured dropout loss. The head is
// re-initialized fresh whether `init` comes from pretraining or not; fusion
// weights and tokens carry over.
TargetResult train_target(const data::Dataset& ds, const data::FoldSplit& split,
                          const TrainConfig& cfg, std::optional<model::ModelParams> init,
                          EventLog* log = nullptr);

// Five-metric evaluation per inference mode over the given sample ids.
metrics::EvalReport evaluate(model::ModelParams& params, const data::Dataset& ds,
                             const std::vector<std::string>& ids,
                             const std::vector<model::InferenceMode>& modes,
                             model::TokenPolicy policy, double threshold = 0.5);

// Modes reported for a config: Both only for plain base training, otherwise
// all three (base training never sees dropped modalities).
std::vector<model::InferenceMode> modes_for(const TrainConfig& cfg);

struct CvResult {
    std::vector<metrics::EvalReport> folds;
    std::vector<metrics::ModeReport> aggregate; // arithmetic mean per metric
    TrainConfig config;

    std::string to_json(int indent = -1) const;
};

// Patient-level four-fold cross-validation: optional pretraining, target
// training and test evaluation per fold. Folds are independent; jobs > 1
// runs them on separate threads without changing any reported number.
CvResult cross_validate(const data::Dataset& ds, const TrainConfig& cfg, std::size_t jobs = 1,
                        EventLog* log = nullptr);

struct AblationRow {
    std::string name;
    TrainConfig config;
    CvResult result;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    std::string to_json(int indent = -1) const;
    // Aligned AUROC-per-mode text table; "/" marks modes a config does not
    // report.
    std::string to_text() const;
};

// The stock seven-row grid: base, conventional and simultaneous dropout with
// zero-fill or learned tokens, plus the two pretraining arms on top of the
// full dropout config.
std::vector<std::pair<std::string, TrainConfig>> default_ablation_grid(const TrainConfig& base);

AblationTable ablate(const data::Dataset& ds,
                     const std::vector<std::pair<std::string, TrainConfig>>& grid,
                     std::size_t jobs = 1, EventLog* log = nullptr);

// Named sub-streams drawn from a fold's base seed (cfg.seed ^ fold_id).
namespace streams {
inline constexpr std::uint64_t kInit = 0x11;
inline constexpr std::uint64_t kHeadReinit = 0x22;
inline constexpr std::uint64_t kTargetShuffle = 0x33;
inline constexpr std::uint64_t kPretrainShuffle = 0x44;
inline constexpr std::uint64_t kSampler = 0x55;
} // namespace streams

} // namespace mmfuse::pipeline
