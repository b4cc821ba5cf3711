#include "mmfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmfuse/optim.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse::pipeline {

using json = nlohmann::ordered_json;
using losses::DropoutKind;
using model::InferenceMode;
using model::TokenPolicy;

const char* to_string(PretrainLoss v) {
    switch (v) {
    case PretrainLoss::None: return "none";
    case PretrainLoss::Con: return "con";
    case PretrainLoss::ConHat: return "con_hat";
    }
    return "?";
}

const char* to_string(ConNorm v) {
    return v == ConNorm::Raw ? "raw" : "mean";
}

namespace {

const char* to_string(DropoutKind v) {
    switch (v) {
    case DropoutKind::None: return "none";
    case DropoutKind::Conventional: return "conventional";
    case DropoutKind::Simultaneous: return "simultaneous";
    }
    return "?";
}

DropoutKind dropout_kind_from(const std::string& s) {
    if (s == "none") return DropoutKind::None;
    if (s == "conventional") return DropoutKind::Conventional;
    if (s == "simultaneous") return DropoutKind::Simultaneous;
    throw ConfigError("dropout.kind must be none|conventional|simultaneous, got '" + s + "'");
}

TokenPolicy token_policy_from(const std::string& s) {
    if (s == "learned") return TokenPolicy::LearnedToken;
    if (s == "zeros") return TokenPolicy::ZeroMatrix;
    throw ConfigError("token_policy must be learned|zeros, got '" + s + "'");
}

PretrainLoss pretrain_loss_from(const std::string& s) {
    if (s == "none") return PretrainLoss::None;
    if (s == "con") return PretrainLoss::Con;
    if (s == "con_hat") return PretrainLoss::ConHat;
    throw ConfigError("pretrain_loss must be none|con|con_hat, got '" + s + "'");
}

ConNorm con_norm_from(const std::string& s) {
    if (s == "raw") return ConNorm::Raw;
    if (s == "mean") return ConNorm::Mean;
    throw ConfigError("con_norm must be raw|mean, got '" + s + "'");
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::mutex g_log_mutex;

void log_line(EventLog* log, const json& event) {
    if (log == nullptr) return;
    const std::string line = event.dump();
    std::lock_guard<std::mutex> lock(g_log_mutex);
    (*log) << line << "\n";
}

} // namespace

void TrainConfig::validate() const {
    if (dropout.lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (pretrain_loss != PretrainLoss::None && pretrain_epochs < 1) {
        throw ConfigError("pretrain_epochs must be >= 1 when pretraining is enabled");
    }
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (d_fuse < 1 || d_proj < 1) throw ConfigError("d_fuse and d_proj must be >= 1");
}

std::string TrainConfig::to_json(int indent) const {
    json out;
    out["dropout"] = {{"kind", to_string(dropout.kind)},
                      {"lambda", dropout.lambda},
                      {"sampler_seed", dropout.sampler_seed}};
    out["token_policy"] = model::to_string(token_policy);
    out["pretrain_loss"] = to_string(pretrain_loss);
    out["pretrain_epochs"] = pretrain_epochs;
    out["lr"] = lr;
    out["weight_decay"] = weight_decay;
    out["epochs"] = epochs;
    out["batch_size"] = batch_size;
    out["d_fuse"] = d_fuse;
    out["d_proj"] = d_proj;
    out["seed"] = seed;
    out["con_norm"] = to_string(con_norm);
    return indent >= 0 ? out.dump(indent) : out.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    TrainConfig cfg;
    std::vector<std::string> unknown;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "dropout") {
                if (!value.is_object()) throw ConfigError("dropout must be an object");
                for (const auto& [dkey, dvalue] : value.items()) {
                    if (dkey == "kind") cfg.dropout.kind = dropout_kind_from(dvalue.get<std::string>());
                    else if (dkey == "lambda") cfg.dropout.lambda = dvalue.get<double>();
                    else if (dkey == "sampler_seed") cfg.dropout.sampler_seed = dvalue.get<std::uint64_t>();
                    else unknown.push_back("dropout." + dkey);
                }
            } else if (key == "lambda") {
                cfg.dropout.lambda = value.get<double>();
            } else if (key == "token_policy") {
                cfg.token_policy = token_policy_from(value.get<std::string>());
            } else if (key == "pretrain_loss") {
                cfg.pretrain_loss = pretrain_loss_from(value.get<std::string>());
            } else if (key == "pretrain_epochs") {
                cfg.pretrain_epochs = value.get<std::size_t>();
            } else if (key == "lr") {
                cfg.lr = value.get<double>();
            } else if (key == "weight_decay") {
                cfg.weight_decay = value.get<double>();
            } else if (key == "epochs") {
                cfg.epochs = value.get<std::size_t>();
            } else if (key == "batch_size") {
                cfg.batch_size = value.get<std::size_t>();
            } else if (key == "d_fuse") {
                cfg.d_fuse = value.get<std::size_t>();
            } else if (key == "d_proj") {
                cfg.d_proj = value.get<std::size_t>();
            } else if (key == "seed") {
                cfg.seed = value.get<std::uint64_t>();
            } else if (key == "con_norm") {
                cfg.con_norm = con_norm_from(value.get<std::string>());
            } else {
                unknown.push_back(key);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config value error: ") + e.what());
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const std::string& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
    cfg.validate();
    return cfg;
}

std::string TrainConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json())));
    return buf;
}

std::vector<InferenceMode> modes_for(const TrainConfig& cfg) {
    if (cfg.dropout.kind == DropoutKind::None) return {InferenceMode::Both};
    return {InferenceMode::Both, InferenceMode::ImageOnly, InferenceMode::TabularOnly};
}

namespace {

std::vector<optim::ParamSpec> param_specs(model::ModelParams& params, bool include_head) {
    std::vector<optim::ParamSpec> specs;
    for (auto& n : params.named()) {
        if (!include_head && (n.name == "head_weight" || n.name == "head_bias")) continue;
        specs.push_back({n.name, n.tensor, n.weight_decay});
    }
    return specs;
}

std::optional<double> mode_auroc(model::ModelParams& params, const data::Batch& batch,
                                 InferenceMode mode, TokenPolicy policy) {
    metrics::ScoredSet set;
    set.scores = model::predict_proba(params, batch.x_image, batch.x_tabular, mode, policy);
    set.labels = batch.labels;
    return metrics::auroc(set);
}

} // namespace

model::ModelParams pretrain(const data::Dataset& ds, const data::FoldSplit& split,
                            const TrainConfig& cfg, model::ModelParams params,
                            std::vector<double>* epoch_losses, EventLog* log) {
    if (cfg.pretrain_loss == PretrainLoss::None) return params;
    cfg.validate();
    if (split.train_ids.empty()) throw ContractError("pretrain: empty training split");

    const std::uint64_t base = cfg.seed ^ static_cast<std::uint64_t>(split.fold_id);
    const std::uint64_t shuffle_seed = rng::derive_seed(base, streams::kPretrainShuffle);
    optim::AdamW opt(param_specs(params, /*include_head=*/false), cfg.lr, cfg.weight_decay);

    for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        const auto batches =
            data::make_batches(ds, split.train_ids, cfg.batch_size, shuffle_seed, epoch);
        double loss_sum = 0.0;
        for (const data::Batch& batch : batches) {
            ad::Graph g;
            const auto bm = model::BoundModel::bind(g, params);
            const ad::Var xc = g.constant(batch.x_image);
            const ad::Var xt = g.constant(batch.x_tabular);
            const ad::Var z_c = model::forward_repr(g, bm, xc, xt, model::ReprKind::Image);
            const ad::Var z_t = model::forward_repr(g, bm, xc, xt, model::ReprKind::Tabular);
            const ad::Var z_f = model::forward_repr(g, bm, xc, xt, model::ReprKind::Fused);
            const ad::Tensor a = losses::pair_labeling(batch.labels);
            const ad::Var t = g.exp(bm.log_scale);
            ad::Var loss = cfg.pretrain_loss == PretrainLoss::Con
                               ? losses::loss_con(g, z_c, z_t, a, t, bm.con_bias)
                               : losses::loss_con_hat(g, z_c, z_t, z_f, a, t, bm.con_bias);
            if (cfg.con_norm == ConNorm::Mean) {
                loss = g.scalar_mul(loss, 1.0 / static_cast<double>(batch.labels.size()));
            }
            g.backward(loss);
            opt.step();
            opt.zero_grad();
            loss_sum += g.value(loss).scalar_value();
        }
        const double mean_loss = loss_sum / static_cast<double>(batches.size());
        if (epoch_losses != nullptr) epoch_losses->push_back(mean_loss);
        log_line(log, {{"event", "pretrain_epoch"},
                       {"fold", split.fold_id},
                       {"epoch", epoch},
                       {"loss", mean_loss}});
    }
    return params;
}

TargetResult train_target(const data::Dataset& ds, const data::FoldSplit& split,
                          const TrainConfig& cfg, std::optional<model::ModelParams> init,
                          EventLog* log) {
    cfg.validate();
    if (split.train_ids.empty()) throw ContractError("train_target: empty training split");
    if (split.val_ids.empty()) throw ContractError("train_target: empty validation split");

    const std::uint64_t base = cfg.seed ^ static_cast<std::uint64_t>(split.fold_id);

    model::ModelParams params =
        init ? std::move(*init)
             : model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
                                  rng::derive_seed(base, streams::kInit));
    // The classifier head never carries over from pretraining.
    model::reinit_head(params, rng::derive_seed(base, streams::kHeadReinit));

    const data::Batch val = data::gather(ds, split.val_ids);
    if (std::count(val.labels.begin(), val.labels.end(), 1) == 0 ||
        std::count(val.labels.begin(), val.labels.end(), 0) == 0) {
        throw ModelSelectionError(
            "validation split of fold " + std::to_string(split.fold_id) +
            " contains a single class; choose a different seed or split");
    }

    optim::AdamW opt(param_specs(params, /*include_head=*/true), cfg.lr, cfg.weight_decay);
    const std::uint64_t shuffle_seed = rng::derive_seed(base, streams::kTargetShuffle);
    const std::uint64_t sampler_seed =
        cfg.dropout.sampler_seed != 0 ? cfg.dropout.sampler_seed
                                      : rng::derive_seed(base, streams::kSampler);
    losses::SubsetSampler sampler(sampler_seed);

    const auto modes = modes_for(cfg);
    TargetResult result;
    model::ModelParams best = params;
    double best_auroc = -1.0;
    std::size_t best_epoch = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches =
            data::make_batches(ds, split.train_ids, cfg.batch_size, shuffle_seed, epoch);
        double loss_sum = 0.0;
        for (const data::Batch& batch : batches) {
            ad::Graph g;
            const auto bm = model::BoundModel::bind(g, params);
            const ad::Var xc = g.constant(batch.x_image);
            const ad::Var xt = g.constant(batch.x_tabular);
            const ad::Var y = g.constant(batch.y);
            ad::Var loss;
            switch (cfg.dropout.kind) {
            case DropoutKind::None:
                loss = losses::loss_base_mode(g, bm, xc, xt, y, InferenceMode::Both,
                                              cfg.token_policy);
                break;
            case DropoutKind::Conventional:
                loss = losses::loss_md(g, bm, xc, xt, y, sampler, cfg.token_policy);
                break;
            case DropoutKind::Simultaneous:
                loss = losses::loss_smd(g, bm, xc, xt, y, cfg.dropout.lambda, cfg.token_policy);
                break;
            }
            g.backward(loss);
            opt.step();
            opt.zero_grad();
            const double loss_value = g.value(loss).scalar_value();
            loss_sum += loss_value;
            result.record.batch_losses.push_back(loss_value);
        }

        EpochStat stat;
        stat.epoch = epoch;
        stat.train_loss = loss_sum / static_cast<double>(batches.size());
        json val_json = json::object();
        std::optional<double> val_both;
        for (const InferenceMode mode : modes) {
            const auto a = mode_auroc(params, val, mode, cfg.token_policy);
            stat.val_auroc.emplace_back(model::to_string(mode), a);
            val_json[model::to_string(mode)] = a ? json(*a) : json(nullptr);
            if (mode == InferenceMode::Both) val_both = a;
        }
        result.record.epochs.push_back(stat);
        log_line(log, {{"event", "epoch"},
                       {"fold", split.fold_id},
                       {"epoch", epoch},
                       {"train_loss", stat.train_loss},
                       {"val_auroc", val_json}});

        if (!val_both) {
            throw ModelSelectionError("validation AUROC undefined at epoch " +
                                      std::to_string(epoch));
        }
        if (*val_both > best_auroc) {
            best_auroc = *val_both;
            best = params;
            best_epoch = epoch;
        }
    }

    result.record.best_epoch = best_epoch;
    result.record.best_val_auroc = best_auroc;
    result.params = std::move(best);
    return result;
}

metrics::EvalReport evaluate(model::ModelParams& params, const data::Dataset& ds,
                             const std::vector<std::string>& ids,
                             const std::vector<InferenceMode>& modes, TokenPolicy policy,
                             double threshold) {
    if (ids.empty()) throw ContractError("evaluate: empty id list");
    const data::Batch batch = data::gather(ds, ids);
    metrics::EvalReport report;
    report.threshold = threshold;
    for (const InferenceMode mode : modes) {
        metrics::ScoredSet set;
        set.scores = model::predict_proba(params, batch.x_image, batch.x_tabular, mode, policy);
        set.labels = batch.labels;
        report.modes.push_back({model::to_string(mode), metrics::compute_bundle(set, threshold)});
    }
    return report;
}

namespace {

json bundle_json(const metrics::MetricBundle& b) {
    json out;
    out["auroc"] = b.auroc ? json(*b.auroc) : json(nullptr);
    out["ap"] = b.ap ? json(*b.ap) : json(nullptr);
    out["aurc"] = b.aurc;
    out["mcc"] = b.mcc;
    out["f_score"] = b.f_score;
    out["n"] = b.n;
    return out;
}

json provenance_json(const TrainConfig& cfg) {
    json out;
    out["engine"] = "mmfuse";
    out["version"] = kEngineVersion;
    out["config"] = json::parse(cfg.to_json());
    out["config_hash"] = cfg.hash();
    out["seed"] = cfg.seed;
    return out;
}

} // namespace

std::string CvResult::to_json(int indent) const {
    json out;
    out["provenance"] = provenance_json(config);
    json folds_json = json::array();
    for (const metrics::EvalReport& r : folds) folds_json.push_back(json::parse(r.to_json()));
    out["folds"] = std::move(folds_json);
    json agg = json::object();
    for (const metrics::ModeReport& m : aggregate) agg[m.mode] = bundle_json(m.metrics);
    out["aggregate"] = std::move(agg);
    return indent >= 0 ? out.dump(indent) : out.dump();
}

CvResult cross_validate(const data::Dataset& ds, const TrainConfig& cfg, std::size_t jobs,
                        EventLog* log) {
    cfg.validate();
    const auto splits = data::split_folds(ds, 4, 0.10, cfg.seed);

    CvResult result;
    result.config = cfg;
    result.folds.resize(splits.size());

    auto run_fold = [&](std::size_t f) {
        const data::FoldSplit& split = splits[f];
        model::ModelParams params = model::init_params(
            ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
            rng::derive_seed(cfg.seed ^ static_cast<std::uint64_t>(split.fold_id),
                             streams::kInit));
        if (cfg.pretrain_loss != PretrainLoss::None) {
            params = pretrain(ds, split, cfg, std::move(params), nullptr, log);
        }
        TargetResult target = train_target(ds, split, cfg, std::move(params), log);
        metrics::EvalReport report =
            evaluate(target.params, ds, split.test_ids, modes_for(cfg), cfg.token_policy);
        report.fold_id = split.fold_id;
        report.seed = cfg.seed;
        report.config_hash = cfg.hash();
        result.folds[f] = std::move(report);
    };

    if (jobs <= 1) {
        for (std::size_t f = 0; f < splits.size(); ++f) {
            try {
                run_fold(f);
            } catch (const Error& e) {
                throw Error("fold " + std::to_string(f) + ": " + e.what());
            }
        }
    } else {
        std::vector<std::exception_ptr> errors(splits.size());
        for (std::size_t start = 0; start < splits.size(); start += jobs) {
            std::vector<std::future<void>> wave;
            const std::size_t end = std::min(splits.size(), start + jobs);
            for (std::size_t f = start; f < end; ++f) {
                wave.push_back(std::async(std::launch::async, [&, f] {
                    try {
                        run_fold(f);
                    } catch (...) {
                        errors[f] = std::current_exception();
                    }
                }));
            }
            for (auto& fut : wave) fut.get();
        }
        for (std::size_t f = 0; f < splits.size(); ++f) {
            if (errors[f]) {
                try {
                    std::rethrow_exception(errors[f]);
                } catch (const std::exception& e) {
                    throw Error("fold " + std::to_string(f) + ": " + e.what());
                }
            }
        }
    }

    // Arithmetic mean per metric per mode; undefined folds make the
    // aggregate undefined rather than silently shrinking the mean.
    for (const InferenceMode mode : modes_for(cfg)) {
        const std::string mode_name = model::to_string(mode);
        metrics::MetricBundle agg;
        bool auroc_defined = true, ap_defined = true;
        double auroc_sum = 0.0, ap_sum = 0.0;
        for (const metrics::EvalReport& r : result.folds) {
            const auto it = std::find_if(r.modes.begin(), r.modes.end(),
                                         [&](const auto& m) { return m.mode == mode_name; });
            const metrics::MetricBundle& b = it->metrics;
            if (b.auroc) auroc_sum += *b.auroc; else auroc_defined = false;
            if (b.ap) ap_sum += *b.ap; else ap_defined = false;
            agg.aurc += b.aurc;
            agg.mcc += b.mcc;
            agg.f_score += b.f_score;
            agg.n += b.n;
        }
        const double k = static_cast<double>(result.folds.size());
        if (auroc_defined) agg.auroc = auroc_sum / k;
        if (ap_defined) agg.ap = ap_sum / k;
        agg.aurc /= k;
        agg.mcc /= k;
        agg.f_score /= k;
        result.aggregate.push_back({mode_name, agg});
    }
    return result;
}

std::vector<std::pair<std::string, TrainConfig>> default_ablation_grid(const TrainConfig& base) {
    auto with = [&](DropoutKind kind, TokenPolicy tokens, PretrainLoss pre) {
        TrainConfig cfg = base;
        cfg.dropout.kind = kind;
        cfg.token_policy = tokens;
        cfg.pretrain_loss = pre;
        return cfg;
    };
    return {
        {"base", with(DropoutKind::None, TokenPolicy::ZeroMatrix, PretrainLoss::None)},
        {"md", with(DropoutKind::Conventional, TokenPolicy::ZeroMatrix, PretrainLoss::None)},
        {"md+token", with(DropoutKind::Conventional, TokenPolicy::LearnedToken, PretrainLoss::None)},
        {"smd", with(DropoutKind::Simultaneous, TokenPolicy::ZeroMatrix, PretrainLoss::None)},
        {"smd+token", with(DropoutKind::Simultaneous, TokenPolicy::LearnedToken, PretrainLoss::None)},
        {"smd+token+con", with(DropoutKind::Simultaneous, TokenPolicy::LearnedToken, PretrainLoss::Con)},
        {"smd+token+con_hat",
         with(DropoutKind::Simultaneous, TokenPolicy::LearnedToken, PretrainLoss::ConHat)},
    };
}

AblationTable ablate(const data::Dataset& ds,
                     const std::vector<std::pair<std::string, TrainConfig>>& grid,
                     std::size_t jobs, EventLog* log) {
    AblationTable table;
    for (const auto& [name, cfg] : grid) {
        AblationRow row;
        row.name = name;
        row.config = cfg;
        row.result = cross_validate(ds, cfg, jobs, log);
        log_line(log, {{"event", "ablation_row"}, {"name", name}, {"config_hash", cfg.hash()}});
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string AblationTable::to_json(int indent) const {
    json out;
    out["engine"] = "mmfuse";
    out["version"] = kEngineVersion;
    json rows_json = json::array();
    for (const AblationRow& row : rows) {
        json r;
        r["name"] = row.name;
        r["result"] = json::parse(row.result.to_json());
        rows_json.push_back(std::move(r));
    }
    out["rows"] = std::move(rows_json);
    return indent >= 0 ? out.dump(indent) : out.dump();
}

std::string AblationTable::to_text() const {
    static const char* kModes[] = {"both", "image_only", "tabular_only"};
    std::size_t name_width = 6;
    for (const AblationRow& row : rows) name_width = std::max(name_width, row.name.size());

    std::ostringstream os;
    os << "AUROC by inference mode\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_width), "config");
    os << buf;
    for (const char* mode : kModes) {
        std::snprintf(buf, sizeof(buf), "  %12s", mode);
        os << buf;
    }
    os << "\n";
    for (const AblationRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(name_width), row.name.c_str());
        os << buf;
        for (const char* mode : kModes) {
            const auto it = std::find_if(row.result.aggregate.begin(), row.result.aggregate.end(),
                                         [&](const auto& m) { return m.mode == mode; });
            if (it == row.result.aggregate.end() || !it->metrics.auroc) {
                std::snprintf(buf, sizeof(buf), "  %12s", "/");
            } else {
                std::snprintf(buf, sizeof(buf), "  %12.4f", *it->metrics.auroc);
            }
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

} // namespace mmfuse::pipeline
