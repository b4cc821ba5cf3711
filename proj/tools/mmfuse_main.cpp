#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfuse/data.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mmfuse;

namespace {

// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric or
// training failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct ConfigOverrides {
    std::optional<std::string> dropout_kind;
    std::optional<double> lambda;
    std::optional<std::uint64_t> sampler_seed;
    std::optional<std::string> token_policy;
    std::optional<std::string> pretrain_loss;
    std::optional<std::size_t> pretrain_epochs;
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> d_fuse;
    std::optional<std::size_t> d_proj;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> con_norm;
};

void add_override_flags(CLI::App* cmd, ConfigOverrides& o) {
    // Help strings carry the TrainConfig defaults; flags override config-file
    // values, which in turn override these defaults.
    cmd->add_option("--dropout", o.dropout_kind,
                    "Dropout kind: none|conventional|simultaneous (default simultaneous)");
    cmd->add_option("--lambda", o.lambda,
                    "Unimodal term weight in the simultaneous loss (default 1)");
    cmd->add_option("--sampler-seed", o.sampler_seed,
                    "Conventional-dropout sampler seed; 0 derives from the run seed (default 0)");
    cmd->add_option("--token-policy", o.token_policy,
                    "Missing-modality fill: learned|zeros (default learned)");
    cmd->add_option("--pretrain-loss", o.pretrain_loss,
                    "Pretraining loss: none|con|con_hat (default none)");
    cmd->add_option("--pretrain-epochs", o.pretrain_epochs,
                    "Contrastive pretraining epochs (default 50)");
    cmd->add_option("--lr", o.lr, "AdamW learning rate (default 1e-4)");
    cmd->add_option("--weight-decay", o.weight_decay,
                    "AdamW decoupled weight decay (default 1e-4)");
    cmd->add_option("--epochs", o.epochs, "Target training epochs (default 150)");
    cmd->add_option("--batch-size", o.batch_size, "Training batch size (default 32)");
    cmd->add_option("--d-fuse", o.d_fuse, "Fusion hidden width (default 64)");
    cmd->add_option("--d-proj", o.d_proj, "Contrastive projection width (default 32)");
    cmd->add_option("--seed", o.seed,
                    "Run seed; every random stream derives from it (default 1)");
    cmd->add_option("--con-norm", o.con_norm,
                    "Contrastive loss scale: raw|mean (default mean)");
}

pipeline::TrainConfig resolve_config(const std::string& config_path, const ConfigOverrides& o) {
    pipeline::TrainConfig cfg;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw FormatError("cannot open config: " + config_path);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        cfg = pipeline::TrainConfig::from_json_text(text);
    }
    // Flags override config-file values.
    if (o.dropout_kind) {
        json j = {{"dropout", {{"kind", *o.dropout_kind}}}};
        cfg.dropout.kind =
            pipeline::TrainConfig::from_json_text(j.dump()).dropout.kind;
    }
    if (o.lambda) cfg.dropout.lambda = *o.lambda;
    if (o.sampler_seed) cfg.dropout.sampler_seed = *o.sampler_seed;
    if (o.token_policy) {
        json j = {{"token_policy", *o.token_policy}};
        cfg.token_policy = pipeline::TrainConfig::from_json_text(j.dump()).token_policy;
    }
    if (o.pretrain_loss) {
        json j = {{"pretrain_loss", *o.pretrain_loss}};
        cfg.pretrain_loss = pipeline::TrainConfig::from_json_text(j.dump()).pretrain_loss;
    }
    if (o.pretrain_epochs) cfg.pretrain_epochs = *o.pretrain_epochs;
    if (o.lr) cfg.lr = *o.lr;
    if (o.weight_decay) cfg.weight_decay = *o.weight_decay;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.d_fuse) cfg.d_fuse = *o.d_fuse;
    if (o.d_proj) cfg.d_proj = *o.d_proj;
    if (o.seed) cfg.seed = *o.seed;
    if (o.con_norm) {
        json j = {{"con_norm", *o.con_norm}};
        cfg.con_norm = pipeline::TrainConfig::from_json_text(j.dump()).con_norm;
    }
    cfg.validate();
    return cfg;
}

data::Dataset load_data(const std::string& dir, std::size_t top_k) {
    data::Dataset ds = data::read_dataset(dir);
    if (top_k > 0) ds = data::truncate_tabular(ds, top_k);
    return ds;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << text;
}

std::string checkpoint_meta(const pipeline::TrainConfig& cfg, const char* stage, int fold_id,
                            const json& extra) {
    json meta;
    meta["engine"] = "mmfuse";
    meta["version"] = pipeline::kEngineVersion;
    meta["stage"] = stage;
    meta["config"] = json::parse(cfg.to_json());
    meta["config_hash"] = cfg.hash();
    meta["seed"] = cfg.seed;
    meta["fold_id"] = fold_id;
    for (const auto& [k, v] : extra.items()) meta[k] = v;
    return meta.dump();
}

std::ofstream open_log(const std::string& path) {
    std::ofstream os;
    if (!path.empty()) {
        os.open(path, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot open log file: " + path);
    }
    return os;
}

data::FoldSplit select_fold(const data::Dataset& ds, const pipeline::TrainConfig& cfg,
                            int fold_id) {
    auto splits = data::split_folds(ds, 4, 0.10, cfg.seed);
    if (fold_id < 0 || fold_id >= static_cast<int>(splits.size())) {
        throw ConfigError("--fold must be in [0, 3]");
    }
    return splits[static_cast<std::size_t>(fold_id)];
}

model::TokenPolicy policy_from_meta(const std::string& meta_json) {
    const json meta = json::parse(meta_json);
    if (meta.contains("config")) {
        const auto cfg = pipeline::TrainConfig::from_json_text(meta["config"].dump());
        return cfg.token_policy;
    }
    return model::TokenPolicy::LearnedToken;
}

int run(int argc, char** argv) {
    CLI::App app{"mmfuse: missingness-robust multimodal fusion trainer"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic embedding dataset");
    std::string gen_out;
    data::SynthConfig synth;
    bool gen_force = false;
    gen_cmd->add_option("--out", gen_out, "Output directory")->required();
    gen_cmd->add_option("--patients", synth.n_patients, "Number of patients")
        ->capture_default_str();
    gen_cmd->add_option("--samples-per-patient", synth.samples_per_patient, "Samples per patient")
        ->capture_default_str();
    gen_cmd->add_option("--latent-dim", synth.latent_dim, "Latent dimension")
        ->capture_default_str();
    gen_cmd->add_option("--dim-c", synth.dim_image, "Image embedding dimension")
        ->capture_default_str();
    gen_cmd->add_option("--dim-t", synth.dim_tabular, "Tabular embedding dimension")
        ->capture_default_str();
    gen_cmd->add_option("--sigma-c", synth.sigma_image, "Image noise std-dev")
        ->capture_default_str();
    gen_cmd->add_option("--sigma-t", synth.sigma_tabular, "Tabular noise std-dev")
        ->capture_default_str();
    gen_cmd->add_option("--label-noise", synth.label_noise, "Label flip probability")
        ->capture_default_str();
    gen_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

    // ---- shared options for training-family commands -----------------------
    struct TrainArgs {
        std::string data_dir, config_path, out_path, report_path, log_path, init_path;
        std::size_t top_k = 0;
        int fold = 0;
        std::size_t jobs = 1;
        ConfigOverrides overrides;
    };

    auto add_common = [&](CLI::App* cmd, TrainArgs& args, bool with_fold) {
        cmd->add_option("--data", args.data_dir, "Dataset directory")->required();
        cmd->add_option("--config", args.config_path, "Training config JSON");
        cmd->add_option("--top-k", args.top_k,
                        "Keep only the first K tabular columns (0 = all)");
        cmd->add_option("--log", args.log_path, "Line-oriented JSON event log file");
        if (with_fold) {
            cmd->add_option("--fold", args.fold, "Cross-validation fold index")
                ->capture_default_str();
        }
        add_override_flags(cmd, args.overrides);
    };

    auto* pretrain_cmd =
        app.add_subcommand("pretrain", "Contrastive pretraining; writes a checkpoint");
    TrainArgs pretrain_args;
    add_common(pretrain_cmd, pretrain_args, /*with_fold=*/true);
    pretrain_cmd->add_option("--out", pretrain_args.out_path, "Checkpoint path")->required();

    auto* train_cmd = app.add_subcommand(
        "train", "Target training (runs configured pretraining first unless --init is given)");
    TrainArgs train_args;
    add_common(train_cmd, train_args, /*with_fold=*/true);
    train_cmd->add_option("--init", train_args.init_path, "Initial checkpoint (MMF1)");
    train_cmd->add_option("--out", train_args.out_path, "Best-checkpoint path")->required();
    train_cmd->add_option("--report", train_args.report_path,
                          "Also evaluate on the fold's test split and write a JSON report");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    TrainArgs eval_args;
    std::string eval_model, eval_mode = "all", eval_split = "test";
    add_common(eval_cmd, eval_args, /*with_fold=*/true);
    eval_cmd->add_option("--model", eval_model, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--mode", eval_mode, "Inference mode: both|image|tabular|all")
        ->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "Sample set: test|val|train|all")
        ->capture_default_str();
    eval_cmd->add_option("--out", eval_args.out_path, "Report JSON path")->required();

    auto* cv_cmd = app.add_subcommand("cv", "Four-fold patient-level cross-validation");
    TrainArgs cv_args;
    add_common(cv_cmd, cv_args, /*with_fold=*/false);
    cv_cmd->add_option("--jobs", cv_args.jobs, "Parallel folds")->capture_default_str();
    cv_cmd->add_option("--out", cv_args.out_path, "Report JSON path")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation grid");
    TrainArgs ablate_args;
    std::string grid_path;
    add_common(ablate_cmd, ablate_args, /*with_fold=*/false);
    ablate_cmd->add_option("--grid", grid_path,
                           "Grid JSON: list of {name, config{...overrides}} rows "
                           "(default: the stock seven-row grid)");
    ablate_cmd->add_option("--jobs", ablate_args.jobs, "Parallel folds")->capture_default_str();
    ablate_cmd->add_option("--out", ablate_args.out_path, "Table JSON path")->required();

    auto* check_cmd = app.add_subcommand("check-grad", "Finite-difference gradient verification");
    std::size_t check_seeds = 10;
    std::uint64_t check_seed = 0;
    double check_eps = 1e-5, check_tol = 1e-4;
    bool inject_fault = false;
    check_cmd->add_option("--seed", check_seed, "Base seed for the random instances")
        ->capture_default_str();
    check_cmd->add_option("--seeds", check_seeds, "Random instances per op/loss")
        ->capture_default_str();
    check_cmd->add_option("--eps", check_eps, "Central-difference step")->capture_default_str();
    check_cmd->add_option("--tol", check_tol, "Maximum accepted error")->capture_default_str();
    check_cmd->add_flag("--inject-fault", inject_fault, "")->group(""); // hidden test hook

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e); // prints help or the usage error
        return code == 0 ? 0 : kExitUsage;
    }

    if (gen_cmd->parsed()) {
        if (fs::exists(gen_out) && !fs::is_empty(gen_out) && !gen_force) {
            throw ConsistencyError("output directory " + gen_out +
                                   " is not empty; pass --force to overwrite");
        }
        data::Dataset ds = data::synth_generate(synth);
        json prov;
        prov["engine"] = "mmfuse";
        prov["version"] = pipeline::kEngineVersion;
        prov["generator"] = {{"n_patients", synth.n_patients},
                             {"samples_per_patient", synth.samples_per_patient},
                             {"latent_dim", synth.latent_dim},
                             {"dim_image", synth.dim_image},
                             {"dim_tabular", synth.dim_tabular},
                             {"sigma_image", synth.sigma_image},
                             {"sigma_tabular", synth.sigma_tabular},
                             {"label_noise", synth.label_noise},
                             {"seed", synth.seed}};
        ds.provenance_json = prov.dump();
        data::write_dataset(ds, gen_out);
        std::cout << "wrote " << ds.size() << " samples to " << gen_out << "\n";
        return 0;
    }

    if (pretrain_cmd->parsed()) {
        const auto cfg = resolve_config(pretrain_args.config_path, pretrain_args.overrides);
        if (cfg.pretrain_loss == pipeline::PretrainLoss::None) {
            throw ConfigError("pretrain requires pretrain_loss con|con_hat "
                              "(config or --pretrain-loss)");
        }
        const auto ds = load_data(pretrain_args.data_dir, pretrain_args.top_k);
        const auto split = select_fold(ds, cfg, pretrain_args.fold);
        auto log = open_log(pretrain_args.log_path);
        auto params = model::init_params(
            ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
            rng::derive_seed(cfg.seed ^ static_cast<std::uint64_t>(split.fold_id),
                             pipeline::streams::kInit));
        params = pipeline::pretrain(ds, split, cfg, std::move(params), nullptr,
                                    log.is_open() ? &log : nullptr);
        model::save_model(params,
                          checkpoint_meta(cfg, "pretrain", split.fold_id, json::object()),
                          pretrain_args.out_path);
        std::cout << "pretrained checkpoint written to " << pretrain_args.out_path << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        const auto cfg = resolve_config(train_args.config_path, train_args.overrides);
        const auto ds = load_data(train_args.data_dir, train_args.top_k);
        const auto split = select_fold(ds, cfg, train_args.fold);
        auto log = open_log(train_args.log_path);
        auto* log_ptr = log.is_open() ? &log : nullptr;

        std::optional<model::ModelParams> init;
        if (!train_args.init_path.empty()) {
            init = model::load_model(train_args.init_path).params;
        } else {
            auto params = model::init_params(
                ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
                rng::derive_seed(cfg.seed ^ static_cast<std::uint64_t>(split.fold_id),
                                 pipeline::streams::kInit));
            if (cfg.pretrain_loss != pipeline::PretrainLoss::None) {
                params = pipeline::pretrain(ds, split, cfg, std::move(params), nullptr, log_ptr);
            }
            init = std::move(params);
        }

        auto result = pipeline::train_target(ds, split, cfg, std::move(init), log_ptr);
        json extra;
        extra["best_epoch"] = result.record.best_epoch;
        extra["best_val_auroc"] = result.record.best_val_auroc;
        model::save_model(result.params, checkpoint_meta(cfg, "target", split.fold_id, extra),
                          train_args.out_path);
        std::cout << "best epoch " << result.record.best_epoch << " (validation AUROC "
                  << result.record.best_val_auroc << "); checkpoint written to "
                  << train_args.out_path << "\n";

        if (!train_args.report_path.empty()) {
            auto report = pipeline::evaluate(result.params, ds, split.test_ids,
                                             pipeline::modes_for(cfg), cfg.token_policy);
            report.fold_id = split.fold_id;
            report.seed = cfg.seed;
            report.config_hash = cfg.hash();
            json out = json::parse(report.to_json());
            out["provenance"] = {{"engine", "mmfuse"},
                                 {"version", pipeline::kEngineVersion},
                                 {"config", json::parse(cfg.to_json())},
                                 {"config_hash", cfg.hash()},
                                 {"seed", cfg.seed}};
            write_text_file(train_args.report_path, out.dump(2) + "\n");
        }
        return 0;
    }

    if (eval_cmd->parsed()) {
        auto loaded = model::load_model(eval_model);
        const json meta = json::parse(loaded.meta_json);
        pipeline::TrainConfig cfg;
        if (meta.contains("config")) {
            cfg = pipeline::TrainConfig::from_json_text(meta["config"].dump());
        }
        if (eval_args.overrides.seed) cfg.seed = *eval_args.overrides.seed;
        const auto ds = load_data(eval_args.data_dir, eval_args.top_k);

        std::vector<std::string> ids;
        if (eval_split == "all") {
            for (const auto& s : ds.samples) ids.push_back(s.sample_id);
        } else {
            const auto split = select_fold(ds, cfg, eval_args.fold);
            if (eval_split == "test") ids = split.test_ids;
            else if (eval_split == "val") ids = split.val_ids;
            else if (eval_split == "train") ids = split.train_ids;
            else throw ConfigError("--split must be test|val|train|all");
        }

        std::vector<model::InferenceMode> modes;
        if (eval_mode == "both") modes = {model::InferenceMode::Both};
        else if (eval_mode == "image") modes = {model::InferenceMode::ImageOnly};
        else if (eval_mode == "tabular") modes = {model::InferenceMode::TabularOnly};
        else if (eval_mode == "all")
            modes = {model::InferenceMode::Both, model::InferenceMode::ImageOnly,
                     model::InferenceMode::TabularOnly};
        else throw ConfigError("--mode must be both|image|tabular|all");

        auto report = pipeline::evaluate(loaded.params, ds, ids, modes,
                                         policy_from_meta(loaded.meta_json));
        report.fold_id = eval_split == "all" ? -1 : eval_args.fold;
        report.seed = cfg.seed;
        report.config_hash = meta.contains("config_hash")
                                 ? meta["config_hash"].get<std::string>()
                                 : cfg.hash();
        json out = json::parse(report.to_json());
        out["provenance"] = {{"engine", "mmfuse"},
                             {"version", pipeline::kEngineVersion},
                             {"checkpoint_meta", meta},
                             {"split", eval_split}};
        write_text_file(eval_args.out_path, out.dump(2) + "\n");
        std::cout << "report written to " << eval_args.out_path << "\n";
        return 0;
    }

    if (cv_cmd->parsed()) {
        const auto cfg = resolve_config(cv_args.config_path, cv_args.overrides);
        const auto ds = load_data(cv_args.data_dir, cv_args.top_k);
        auto log = open_log(cv_args.log_path);
        const auto result =
            pipeline::cross_validate(ds, cfg, cv_args.jobs, log.is_open() ? &log : nullptr);
        write_text_file(cv_args.out_path, result.to_json(2) + "\n");

        std::cout << "aggregate over " << result.folds.size() << " folds\n";
        char line[160];
        std::snprintf(line, sizeof(line), "%-14s %8s %8s %8s %8s %8s\n", "mode", "auroc", "ap",
                      "aurc", "mcc", "f_score");
        std::cout << line;
        for (const auto& m : result.aggregate) {
            std::snprintf(line, sizeof(line), "%-14s %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                          m.mode.c_str(), m.metrics.auroc.value_or(-1.0),
                          m.metrics.ap.value_or(-1.0), m.metrics.aurc, m.metrics.mcc,
                          m.metrics.f_score);
            std::cout << line;
        }
        std::cout << "report written to " << cv_args.out_path << "\n";
        return 0;
    }

    if (ablate_cmd->parsed()) {
        const auto base = resolve_config(ablate_args.config_path, ablate_args.overrides);
        const auto ds = load_data(ablate_args.data_dir, ablate_args.top_k);
        auto log = open_log(ablate_args.log_path);

        std::vector<std::pair<std::string, pipeline::TrainConfig>> grid;
        if (grid_path.empty()) {
            grid = pipeline::default_ablation_grid(base);
        } else {
            std::ifstream is(grid_path);
            if (!is) throw FormatError("cannot open grid: " + grid_path);
            json rows;
            try {
                rows = json::parse(is);
            } catch (const json::exception& e) {
                throw FormatError("grid parse error: " + std::string(e.what()));
            }
            if (!rows.is_array()) throw FormatError("grid must be a JSON array");
            for (const auto& row : rows) {
                const std::string name = row.at("name").get<std::string>();
                // Row configs start from the base config and apply overrides.
                json merged = json::parse(base.to_json());
                for (const auto& [k, v] : row.at("config").items()) {
                    if (k == "dropout" && merged.contains("dropout")) {
                        for (const auto& [dk, dv] : v.items()) merged["dropout"][dk] = dv;
                    } else {
                        merged[k] = v;
                    }
                }
                grid.emplace_back(name, pipeline::TrainConfig::from_json_text(merged.dump()));
            }
        }

        const auto table =
            pipeline::ablate(ds, grid, ablate_args.jobs, log.is_open() ? &log : nullptr);
        write_text_file(ablate_args.out_path, table.to_json(2) + "\n");
        std::cout << table.to_text();
        std::cout << "table written to " << ablate_args.out_path << "\n";
        return 0;
    }

    if (check_cmd->parsed()) {
        const auto start = std::chrono::steady_clock::now();
        const auto report = gradcheck::run_gradient_suite(check_seeds, check_eps, check_tol,
                                                          inject_fault, check_seed);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& e : report.entries) {
            char line[160];
            std::snprintf(line, sizeof(line), "%-26s max_rel_err=%.3e  coords=%-6zu %s\n",
                          e.name.c_str(), e.max_rel_err, e.coords_checked,
                          e.passed ? "PASS" : "FAIL");
            std::cout << line;
        }
        std::cout << "checked " << report.entries.size() << " entries in " << elapsed << " s (eps="
                  << check_eps << ", tol=" << check_tol << ")\n";
        if (!report.all_passed()) {
            std::cerr << "gradient check FAILED\n";
            return kExitNumeric;
        }
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ConsistencyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
