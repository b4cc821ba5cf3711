#include <doctest.h>

#include <cmath>

#include "mmfuse/pipeline.hpp"

using namespace mmfuse;
using losses::DropoutKind;
using model::InferenceMode;
using model::TokenPolicy;
using pipeline::PretrainLoss;
using pipeline::TrainConfig;

namespace {

data::Dataset small_dataset(std::uint64_t seed, double sigma_c = 1.0, double sigma_t = 0.5) {
    data::SynthConfig cfg;
    cfg.n_patients = 60;
    cfg.latent_dim = 4;
    cfg.dim_image = 6;
    cfg.dim_tabular = 4;
    cfg.sigma_image = sigma_c;
    cfg.sigma_tabular = sigma_t;
    cfg.label_noise = 0.0;
    cfg.seed = seed;
    return data::synth_generate(cfg);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.pretrain_epochs = 4;
    cfg.batch_size = 8;
    cfg.d_fuse = 24;
    cfg.d_proj = 8;
    cfg.lr = 3e-3; // tiny runs need a livelier rate than the full-scale default
    cfg.seed = 5;
    return cfg;
}

bool params_equal(const model::ModelParams& a, const model::ModelParams& b) {
    const auto an = a.named_const();
    const auto bn = b.named_const();
    for (std::size_t i = 0; i < an.size(); ++i) {
        if (an[i].second->data != bn[i].second->data) return false;
    }
    return true;
}

} // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("config: defaults, canonical serialization, hash stability") {
    const TrainConfig cfg;
    CHECK(cfg.dropout.kind == DropoutKind::Simultaneous);
    CHECK(cfg.dropout.lambda == 1.0);
    CHECK(cfg.token_policy == TokenPolicy::LearnedToken);
    CHECK(cfg.pretrain_loss == PretrainLoss::None);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.weight_decay == 1e-4);
    CHECK(cfg.epochs == 150);
    CHECK(cfg.pretrain_epochs == 50);
    CHECK(cfg.con_norm == pipeline::ConNorm::Mean);

    const TrainConfig round = TrainConfig::from_json_text(cfg.to_json());
    CHECK(round.to_json() == cfg.to_json());
    CHECK(round.hash() == cfg.hash());
    CHECK(cfg.hash().size() == 16);

    TrainConfig other = cfg;
    other.seed = 999;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("config: unknown keys are all reported; top-level lambda aliases dropout") {
    try {
        TrainConfig::from_json_text(R"({"lr": 0.1, "bogus": 1, "dropout": {"kidn": "none"}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bogus") != std::string::npos);
        CHECK(msg.find("dropout.kidn") != std::string::npos);
    }

    const auto cfg = TrainConfig::from_json_text(R"({"lambda": 0.5})");
    CHECK(cfg.dropout.lambda == 0.5);

    CHECK_THROWS_AS(TrainConfig::from_json_text(R"({"lambda": -1})"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json_text(R"({"epochs": 0})"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json_text(R"({"token_policy": "wat"})"), ConfigError);
}

TEST_CASE("pretrain with loss none returns parameters unchanged") {
    const auto ds = small_dataset(1);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.pretrain_loss = PretrainLoss::None;
    auto params = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj, 3);
    const auto before = params;
    const auto after = pipeline::pretrain(ds, folds[0], cfg, std::move(params));
    CHECK(params_equal(before, after));
}

TEST_CASE("pretraining loss trends down on noiseless data") {
    const auto ds = small_dataset(2, 0.0, 0.0);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.pretrain_loss = PretrainLoss::ConHat;
    cfg.pretrain_epochs = 50;
    auto params = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
                                     rng::derive_seed(cfg.seed, pipeline::streams::kInit));
    std::vector<double> epoch_losses;
    pipeline::pretrain(ds, folds[0], cfg, std::move(params), &epoch_losses);
    REQUIRE(epoch_losses.size() == 50);
    CHECK(epoch_losses.back() < epoch_losses.front());
    // Trend, not strict monotonicity: the last-quarter mean sits below the
    // first-quarter mean.
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 12; ++i) {
        head += epoch_losses[i];
        tail += epoch_losses[epoch_losses.size() - 1 - i];
    }
    CHECK(tail < head);
}

TEST_CASE("pretraining is bitwise deterministic for a fixed seed") {
    const auto ds = small_dataset(3);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.pretrain_loss = PretrainLoss::Con;
    auto run = [&]() {
        auto params = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse,
                                         cfg.d_proj, 17);
        return pipeline::pretrain(ds, folds[0], cfg, std::move(params));
    };
    CHECK(params_equal(run(), run()));
}

TEST_CASE("pretraining accepts a batch of size 1") {
    const auto ds = small_dataset(4);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.pretrain_loss = PretrainLoss::ConHat;
    cfg.batch_size = 1;
    cfg.pretrain_epochs = 1;
    auto params = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj, 3);
    CHECK_NOTHROW(pipeline::pretrain(ds, folds[0], cfg, std::move(params)));
}

TEST_CASE("train_target: best_epoch bookkeeping and separable-data sanity") {
    const auto ds = small_dataset(5, 0.0, 0.0); // noiseless
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.epochs = 40;
    const auto result = pipeline::train_target(ds, folds[0], cfg, std::nullopt);

    double best = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& stat : result.record.epochs) {
        const auto both = stat.val_auroc.front().second;
        REQUIRE(both.has_value());
        if (*both > best) {
            best = *both;
            best_epoch = stat.epoch;
        }
    }
    CHECK(result.record.best_epoch == best_epoch);
    CHECK(result.record.best_val_auroc == best);
    CHECK(result.record.best_val_auroc >= 0.99); // separable data trains out
    const std::size_t batches_per_epoch =
        (folds[0].train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
    CHECK(result.record.batch_losses.size() == cfg.epochs * batches_per_epoch);
}

TEST_CASE("train_target with dropout none reduces to plain base training") {
    const auto ds = small_dataset(12);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    cfg.dropout.kind = DropoutKind::None;
    const auto result = pipeline::train_target(ds, folds[0], cfg, std::nullopt);
    // Only the Both mode is tracked for a base-loss config.
    CHECK(result.record.epochs.front().val_auroc.size() == 1);
    CHECK(result.record.epochs.front().val_auroc.front().first == std::string("both"));
}

TEST_CASE("stage isolation: disabled pretraining leaves target training untouched") {
    const auto ds = small_dataset(7);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();

    // Path A: explicit pretrain call with loss none, then target.
    auto params_a = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
                                       rng::derive_seed(cfg.seed ^ 0, pipeline::streams::kInit));
    params_a = pipeline::pretrain(ds, folds[0], cfg, std::move(params_a));
    const auto result_a = pipeline::train_target(ds, folds[0], cfg, std::move(params_a));

    // Path B: target training from the same derived init, no pretrain call.
    auto params_b = model::init_params(ds.dim_image(), ds.dim_tabular(), cfg.d_fuse, cfg.d_proj,
                                       rng::derive_seed(cfg.seed ^ 0, pipeline::streams::kInit));
    const auto result_b = pipeline::train_target(ds, folds[0], cfg, std::move(params_b));

    CHECK(params_equal(result_a.params, result_b.params));
    CHECK(result_a.record.batch_losses == result_b.record.batch_losses);
}

TEST_CASE("train_target rejects a single-class validation split") {
    // Build a dataset whose labels are all 1 for the validation patients by
    // construction: all labels identical.
    data::Dataset ds;
    for (int p = 0; p < 8; ++p) {
        const std::string pid = "p" + std::to_string(p);
        ds.samples.push_back({pid + "_s0", pid, 1});
    }
    ds.image = ad::Tensor(8, 3);
    ds.tabular = ad::Tensor(8, 2);
    for (std::size_t i = 0; i < ds.image.data.size(); ++i) ds.image.data[i] = double(i % 5) - 2.0;
    for (std::size_t i = 0; i < ds.tabular.data.size(); ++i) ds.tabular.data[i] = double(i % 3);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    CHECK_THROWS_AS(pipeline::train_target(ds, folds[0], small_config(), std::nullopt),
                    ModelSelectionError);
}

TEST_CASE("evaluate is pure and isolates the image-only mode from tabular data") {
    const auto ds = small_dataset(15);
    const auto folds = data::split_folds(ds, 4, 0.10, 5);
    TrainConfig cfg = small_config();
    auto result = pipeline::train_target(ds, folds[0], cfg, std::nullopt);

    const auto modes = pipeline::modes_for(cfg);
    const auto r1 = pipeline::evaluate(result.params, ds, folds[0].test_ids, modes,
                                       cfg.token_policy);
    const auto r2 = pipeline::evaluate(result.params, ds, folds[0].test_ids, modes,
                                       cfg.token_policy);
    CHECK(r1.to_json() == r2.to_json());

    // Corrupt the tabular matrix of the test rows; ImageOnly must not move.
    data::Dataset corrupted = ds;
    for (auto& v : corrupted.tabular.data) v = -v * 3.0 + 1.0;
    const auto r3 = pipeline::evaluate(result.params, corrupted, folds[0].test_ids, modes,
                                       cfg.token_policy);
    auto find_mode = [](const metrics::EvalReport& r, const char* mode) {
        for (const auto& m : r.modes) {
            if (m.mode == mode) return m.metrics;
        }
        FAIL("mode not found");
        return metrics::MetricBundle{};
    };
    CHECK(*find_mode(r1, "image_only").auroc == *find_mode(r3, "image_only").auroc);
    CHECK(find_mode(r1, "image_only").aurc == find_mode(r3, "image_only").aurc);

    CHECK_THROWS_AS(pipeline::evaluate(result.params, ds, {}, modes, cfg.token_policy),
                    ContractError);
}

TEST_CASE("cross_validate: structure, determinism, and thread-count independence") {
    const auto ds = small_dataset(16);
    TrainConfig cfg = small_config();
    const auto a = pipeline::cross_validate(ds, cfg, 1);
    REQUIRE(a.folds.size() == 4);
    for (int f = 0; f < 4; ++f) {
        CHECK(a.folds[f].fold_id == f);
        CHECK(a.folds[f].config_hash == cfg.hash());
    }
    REQUIRE(a.aggregate.size() == 3);

    // Aggregate AUROC is the arithmetic mean of the fold AUROCs.
    double sum = 0.0;
    for (const auto& fold : a.folds) sum += *fold.modes.front().metrics.auroc;
    CHECK(a.aggregate.front().metrics.auroc ==
          doctest::Approx(sum / 4.0).epsilon(1e-15));

    const auto b = pipeline::cross_validate(ds, cfg, 1);
    CHECK(a.to_json() == b.to_json()); // byte-identical reruns
    const auto c = pipeline::cross_validate(ds, cfg, 4);
    CHECK(a.to_json() == c.to_json()); // jobs do not change any number
}

TEST_CASE("ablate: one-row grid equals cross_validate; base row hides unimodal modes") {
    const auto ds = small_dataset(10);
    TrainConfig cfg = small_config();
    const auto single = pipeline::ablate(ds, {{"only", cfg}}, 1);
    REQUIRE(single.rows.size() == 1);
    CHECK(single.rows[0].result.to_json() == pipeline::cross_validate(ds, cfg, 1).to_json());

    TrainConfig base_cfg = cfg;
    base_cfg.dropout.kind = DropoutKind::None;
    const auto table = pipeline::ablate(ds, {{"base", base_cfg}}, 1);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].result.aggregate.size() == 1); // both only
    const std::string text = table.to_text();
    CHECK(text.find("/") != std::string::npos); // unimodal cells rendered as "/"

    const auto grid = pipeline::default_ablation_grid(cfg);
    REQUIRE(grid.size() == 7);
    CHECK(grid[0].second.dropout.kind == DropoutKind::None);
    CHECK(grid[6].second.pretrain_loss == PretrainLoss::ConHat);
}

TEST_CASE("cross_validate with pretraining stays deterministic") {
    const auto ds = small_dataset(12);
    TrainConfig cfg = small_config();
    cfg.pretrain_loss = PretrainLoss::ConHat;
    cfg.pretrain_epochs = 2;
    const auto a = pipeline::cross_validate(ds, cfg, 2);
    const auto b = pipeline::cross_validate(ds, cfg, 2);
    CHECK(a.to_json() == b.to_json());
}

TEST_SUITE_END();
