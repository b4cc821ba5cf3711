#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;
using model::InferenceMode;
using model::TokenPolicy;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const char* name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove(p);
    return p;
}

ad::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    rng::Xoshiro256pp gen(seed);
    ad::Tensor t(r, c);
    for (auto& v : t.data) v = scale * gen.normal();
    return t;
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("init_params: determinism, token zeros, scale init, bound") {
    const auto a = model::init_params(6, 4, 8, 3, 42);
    const auto b = model::init_params(6, 4, 8, 3, 42);
    CHECK(a.fuse_weight.data == b.fuse_weight.data);
    CHECK(a.head_weight.data == b.head_weight.data);

    for (double v : a.token_image.data) CHECK(v == 0.0);
    for (double v : a.token_tabular.data) CHECK(v == 0.0);
    for (double v : a.fuse_bias.data) CHECK(v == 0.0);
    CHECK(std::exp(a.log_scale.data[0]) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(a.con_bias.data[0] == -10.0);

    // Uniform bound sqrt(6 / (fan_in + fan_out)) over 1000 draws.
    const auto big = model::init_params(25, 25, 20, 5, 7); // 50*20 = 1000 fuse draws
    const double bound = std::sqrt(6.0 / (50 + 20));
    for (double v : big.fuse_weight.data) {
        CHECK(std::fabs(v) <= bound);
    }
    const auto c = model::init_params(6, 4, 8, 3, 43);
    CHECK(a.fuse_weight.data != c.fuse_weight.data);
}

TEST_CASE("fuse: zero input with zero tokens and bias gives zeros") {
    auto params = model::init_params(3, 2, 4, 2, 1);
    ad::Graph g;
    const auto bm = model::BoundModel::bind(g, params);
    const ad::Var fused = model::fuse(g, bm, g.constant(ad::Tensor(2, 3)),
                                      g.constant(ad::Tensor(2, 2)));
    for (double v : g.value(fused).data) CHECK(v == 0.0);
}

TEST_CASE("zero-pinned tokens make LearnedToken and ZeroMatrix bitwise identical") {
    auto params = model::init_params(5, 4, 6, 3, 9);
    // tokens are zero-initialized; leave them pinned
    const ad::Tensor x_c = random_tensor(4, 5, 10);
    const ad::Tensor x_t = random_tensor(4, 4, 11);
    for (const InferenceMode mode :
         {InferenceMode::Both, InferenceMode::ImageOnly, InferenceMode::TabularOnly}) {
        const auto learned =
            model::predict_proba(params, x_c, x_t, mode, TokenPolicy::LearnedToken);
        const auto zeros = model::predict_proba(params, x_c, x_t, mode, TokenPolicy::ZeroMatrix);
        CHECK(learned == zeros);
    }
}

TEST_CASE("nonzero token and nonzero fusion weights change the unimodal forward") {
    auto params = model::init_params(5, 4, 6, 3, 12);
    for (auto& v : params.token_tabular.data) v = 1.0;
    const ad::Tensor x_c = random_tensor(4, 5, 13);
    const ad::Tensor x_t = random_tensor(4, 4, 14);
    const auto learned = model::predict_proba(params, x_c, x_t, InferenceMode::ImageOnly,
                                              TokenPolicy::LearnedToken);
    const auto zeros = model::predict_proba(params, x_c, x_t, InferenceMode::ImageOnly,
                                            TokenPolicy::ZeroMatrix);
    CHECK(learned != zeros);
}

TEST_CASE("forward_logit: zero weights give p = 0.5; rows are independent") {
    auto params = model::init_params(5, 4, 6, 3, 15);
    for (auto& v : params.fuse_weight.data) v = 0.0;
    for (auto& v : params.head_weight.data) v = 0.0;
    const ad::Tensor x_c = random_tensor(3, 5, 16);
    const ad::Tensor x_t = random_tensor(3, 4, 17);
    for (double p : model::predict_proba(params, x_c, x_t, InferenceMode::Both,
                                         TokenPolicy::LearnedToken)) {
        CHECK(p == 0.5);
    }

    // Batch rows are independent: permuting rows permutes outputs.
    auto params2 = model::init_params(5, 4, 6, 3, 18);
    const auto base = model::predict_proba(params2, x_c, x_t, InferenceMode::Both,
                                           TokenPolicy::LearnedToken);
    ad::Tensor x_c_rev(3, 5), x_t_rev(3, 4);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) x_c_rev.at(i, j) = x_c.at(2 - i, j);
        for (std::size_t j = 0; j < 4; ++j) x_t_rev.at(i, j) = x_t.at(2 - i, j);
    }
    const auto rev = model::predict_proba(params2, x_c_rev, x_t_rev, InferenceMode::Both,
                                          TokenPolicy::LearnedToken);
    for (std::size_t i = 0; i < 3; ++i) CHECK(base[i] == rev[2 - i]);
}

TEST_CASE("forward_logit stays finite and in (0,1) under 1e3-scaled inputs") {
    auto params = model::init_params(8, 6, 10, 4, 19);
    const ad::Tensor x_c = random_tensor(5, 8, 20, 1e3);
    const ad::Tensor x_t = random_tensor(5, 6, 21, 1e3);
    for (const InferenceMode mode :
         {InferenceMode::Both, InferenceMode::ImageOnly, InferenceMode::TabularOnly}) {
        for (double p :
             model::predict_proba(params, x_c, x_t, mode, TokenPolicy::LearnedToken)) {
            CHECK(std::isfinite(p));
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
    }
}

TEST_CASE("forward_logit requires the modality its mode uses") {
    auto params = model::init_params(3, 2, 4, 2, 22);
    const ad::Tensor x_c = random_tensor(2, 3, 23);
    ad::Graph g;
    const auto bm = model::BoundModel::bind(g, params);
    CHECK_THROWS_AS(model::forward_logit(g, bm, &x_c, nullptr, InferenceMode::Both,
                                         TokenPolicy::LearnedToken),
                    ContractError);
    CHECK_NOTHROW(model::forward_logit(g, bm, &x_c, nullptr, InferenceMode::ImageOnly,
                                       TokenPolicy::LearnedToken));
}

TEST_CASE("forward_repr: unit rows, shape, and X_t independence of z_c") {
    auto params = model::init_params(5, 4, 8, 32, 24);
    rng::Xoshiro256pp gen(25);
    for (auto& v : params.token_image.data) v = 0.2 * gen.normal();
    for (auto& v : params.token_tabular.data) v = 0.2 * gen.normal();
    const ad::Tensor x_c = random_tensor(5, 5, 26);
    const ad::Tensor x_t = random_tensor(5, 4, 27);

    ad::Graph g;
    const auto bm = model::BoundModel::bind(g, params);
    const ad::Var z_c =
        model::forward_repr(g, bm, g.constant(x_c), g.constant(x_t), model::ReprKind::Image);
    const auto& zc = g.value(z_c);
    CHECK(zc.rows == 5);
    CHECK(zc.cols == 32);
    for (std::size_t i = 0; i < zc.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < zc.cols; ++j) sq += zc.at(i, j) * zc.at(i, j);
        CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
    }

    // z_c does not depend on the tabular values: perturb X_t, recompute.
    ad::Graph g2;
    const auto bm2 = model::BoundModel::bind(g2, params);
    const ad::Var z_c2 =
        model::forward_repr(g2, bm2, g2.constant(x_c), g2.constant(random_tensor(5, 4, 99)),
                            model::ReprKind::Image);
    CHECK(g2.value(z_c2).data == zc.data);
}

TEST_CASE("unimodal forward isolates the absent modality's input and uses its token") {
    auto params = model::init_params(5, 4, 6, 3, 28);
    rng::Xoshiro256pp gen(29);
    for (auto& v : params.token_tabular.data) v = 0.5 * gen.normal();

    ad::Graph g;
    const auto bm = model::BoundModel::bind(g, params);
    const ad::Var x_c = g.input(random_tensor(4, 5, 30));
    const ad::Var x_t = g.input(random_tensor(4, 4, 31));
    const ad::Var logits = model::forward_logit_vars(g, bm, x_c, x_t, InferenceMode::ImageOnly,
                                                     TokenPolicy::LearnedToken);
    g.backward(g.reduce_sum(logits));

    for (double v : g.grad(x_t)) CHECK(v == 0.0); // absent input: exactly zero
    bool image_nonzero = false;
    for (double v : g.grad(x_c)) image_nonzero |= v != 0.0;
    CHECK(image_nonzero);
    bool token_nonzero = false;
    for (double v : params.token_tabular.grad) token_nonzero |= v != 0.0;
    CHECK(token_nonzero); // the token participates instead
}

TEST_CASE("MMF1 checkpoint round-trips bitwise with meta") {
    auto params = model::init_params(5, 4, 6, 3, 32);
    rng::Xoshiro256pp gen(33);
    for (auto& n : params.named()) {
        for (auto& v : n.tensor->data) v = gen.normal();
    }
    const auto path = temp_file("mmfuse_ckpt.mmf1");
    model::save_model(params, R"({"stage":"target","note":"x"})", path);

    auto loaded = model::load_model(path);
    auto expect = params.named();
    auto got = loaded.params.named();
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(got[i].tensor->data == expect[i].tensor->data);
    }
    CHECK(loaded.meta_json.find("\"stage\":\"target\"") != std::string::npos);
}

TEST_CASE("MMF1 rejects corrupted magic") {
    auto params = model::init_params(3, 2, 4, 2, 34);
    const auto path = temp_file("mmfuse_ckpt_bad.mmf1");
    model::save_model(params, "{}", path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(model::load_model(path), FormatError);
}

TEST_CASE("MMF1 header offsets support random access to one tensor") {
    auto params = model::init_params(5, 4, 6, 3, 35);
    rng::Xoshiro256pp gen(36);
    for (auto& v : params.head_weight.data) v = gen.normal();
    const auto path = temp_file("mmfuse_ckpt_ra.mmf1");
    model::save_model(params, "{}", path);

    const ad::Tensor head = model::load_model_tensor(path, "head_weight");
    CHECK(head.rows == 6);
    CHECK(head.cols == 1);
    CHECK(head.data == params.head_weight.data);
    CHECK_THROWS_AS(model::load_model_tensor(path, "missing"), FormatError);
}

TEST_CASE("reinit_head refreshes only the head") {
    auto a = model::init_params(5, 4, 6, 3, 37);
    auto b = a;
    model::reinit_head(b, 38);
    CHECK(a.fuse_weight.data == b.fuse_weight.data);
    CHECK(a.token_image.data == b.token_image.data);
    CHECK(a.head_weight.data != b.head_weight.data);
    for (double v : b.head_bias.data) CHECK(v == 0.0);
}

TEST_SUITE_END();
