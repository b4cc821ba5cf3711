#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mmfuse/errors.hpp"

namespace mmfuse::metrics {

using json = nlohmann::ordered_json;

void ScoredSet::validate() const {
    if (scores.size() != labels.size()) {
        throw ContractError("ScoredSet: scores and labels lengths differ");
    }
    if (scores.empty()) throw ContractError("ScoredSet: empty");
    for (double v : scores) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ContractError("ScoredSet: score outside [0,1]: " + std::to_string(v));
        }
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("ScoredSet: label must be 0 or 1");
    }
}

std::optional<double> auroc(const ScoredSet& s) {
    s.validate();
    const std::size_t n = s.scores.size();
    const std::size_t n_pos = static_cast<std::size_t>(
        std::count(s.labels.begin(), s.labels.end(), 1));
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

    // Average ranks over tie groups (1-based ranks).
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (s.labels[order[k]] == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double wins = rank_sum_pos - np * (np + 1.0) / 2.0;
    return wins / (np * static_cast<double>(n_neg));
}

std::optional<double> average_precision(const ScoredSet& s) {
    s.validate();
    const std::size_t n = s.scores.size();
    const std::size_t n_pos = static_cast<std::size_t>(
        std::count(s.labels.begin(), s.labels.end(), 1));
    if (n_pos == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });

    double ap = 0.0;
    std::size_t tp = 0, seen = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        std::size_t tp_group = 0;
        while (j < n && s.scores[order[j]] == s.scores[order[i]]) {
            if (s.labels[order[j]] == 1) ++tp_group;
            ++j;
        }
        tp += tp_group;
        seen = j;
        if (tp_group > 0) {
            const double delta_recall = static_cast<double>(tp_group) / static_cast<double>(n_pos);
            const double precision = static_cast<double>(tp) / static_cast<double>(seen);
            ap += delta_recall * precision;
        }
        i = j;
    }
    return ap;
}

namespace {

struct Confusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(const ScoredSet& s, double threshold) {
    Confusion c;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
        const bool pred = s.scores[i] >= threshold;
        const bool truth = s.labels[i] == 1;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

} // namespace

double aurc(const ScoredSet& s, double threshold) {
    s.validate();
    const std::size_t n = s.scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::max(s.scores[a], 1.0 - s.scores[a]) > std::max(s.scores[b], 1.0 - s.scores[b]);
    });

    double area = 0.0;
    std::size_t wrong = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = order[k];
        const bool pred = s.scores[idx] >= threshold;
        if (pred != (s.labels[idx] == 1)) ++wrong;
        area += static_cast<double>(wrong) / static_cast<double>(k + 1);
    }
    return area / static_cast<double>(n);
}

double mcc(const ScoredSet& s, double threshold) {
    s.validate();
    const Confusion c = confusion(s, threshold);
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    const double denom_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom_sq == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom_sq);
}

double f_score(const ScoredSet& s, double threshold) {
    s.validate();
    const Confusion c = confusion(s, threshold);
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    if (denom == 0.0) return 0.0;
    return 2.0 * static_cast<double>(c.tp) / denom;
}

MetricBundle compute_bundle(const ScoredSet& s, double threshold) {
    MetricBundle b;
    b.auroc = auroc(s);
    b.ap = average_precision(s);
    b.aurc = aurc(s, threshold);
    b.mcc = mcc(s, threshold);
    b.f_score = f_score(s, threshold);
    b.n = s.scores.size();
    return b;
}

namespace {

json bundle_to_json(const MetricBundle& b) {
    json out;
    out["auroc"] = b.auroc ? json(*b.auroc) : json(nullptr);
    out["ap"] = b.ap ? json(*b.ap) : json(nullptr);
    out["aurc"] = b.aurc;
    out["mcc"] = b.mcc;
    out["f_score"] = b.f_score;
    out["n"] = b.n;
    return out;
}

} // namespace

std::string EvalReport::to_json(int indent) const {
    json out;
    json modes_json = json::object();
    for (const ModeReport& m : modes) modes_json[m.mode] = bundle_to_json(m.metrics);
    out["modes"] = std::move(modes_json);
    out["threshold"] = threshold;
    out["config_hash"] = config_hash;
    out["seed"] = seed;
    out["fold_id"] = fold_id;
    return indent >= 0 ? out.dump(indent) : out.dump();
}

} // namespace mmfuse::metrics
