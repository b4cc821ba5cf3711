#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mmfuse::metrics {

// Predicted P(y=1) plus the true labels, same order.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;

    void validate() const; // lengths equal, scores in [0,1], nonempty
};

// Mann-Whitney AUROC via average ranks; ties count one half. Undefined
// (nullopt) when the set is single-class.
std::optional<double> auroc(const ScoredSet& s);

// Area under the precision-recall step function over descending-score
// prefixes; all samples at an equal score enter together. Undefined when
// there are no positives.
std::optional<double> average_precision(const ScoredSet& s);

// Area under the risk-coverage curve: confidence = max(score, 1-score),
// sorted descending with stable input order on ties; risk at k is the
// thresholded error rate among the top k.
double aurc(const ScoredSet& s, double threshold = 0.5);

// Matthews correlation coefficient at the threshold; 0 when any confusion
// factor is empty.
double mcc(const ScoredSet& s, double threshold = 0.5);

// F1 at the threshold; 0 when the denominator is empty.
double f_score(const ScoredSet& s, double threshold = 0.5);

// Metric bundle for one inference mode. Undefined metrics stay as nulls in
// the serialized report, never as fabricated numbers.
struct MetricBundle {
    std::optional<double> auroc;
    std::optional<double> ap;
    double aurc = 0.0;
    double mcc = 0.0;
    double f_score = 0.0;
    std::size_t n = 0;
};

MetricBundle compute_bundle(const ScoredSet& s, double threshold = 0.5);

struct ModeReport {
    std::string mode; // "both" | "image_only" | "tabular_only"
    MetricBundle metrics;
};

struct EvalReport {
    std::vector<ModeReport> modes;
    double threshold = 0.5;
    std::string config_hash;
    std::uint64_t seed = 0;
    int fold_id = -1;

    std::string to_json(int indent = -1) const;
};

} // namespace mmfuse::metrics
