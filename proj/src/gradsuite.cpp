#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mmfuse/gradcheck.hpp"
#include "mmfuse/losses.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse::gradcheck {

namespace {

using model::InferenceMode;
using model::TokenPolicy;

ad::Tensor random_tensor(std::size_t rows, std::size_t cols, rng::Xoshiro256pp& gen,
                         double scale = 1.0) {
    ad::Tensor t(rows, cols);
    for (auto& v : t.data) v = scale * gen.normal();
    return t;
}

// Keeps values clear of the relu kink so central differences stay valid.
ad::Tensor random_tensor_off_kink(std::size_t rows, std::size_t cols, rng::Xoshiro256pp& gen) {
    ad::Tensor t = random_tensor(rows, cols, gen);
    for (auto& v : t.data) {
        if (std::fabs(v) < 0.05) v += v >= 0.0 ? 0.1 : -0.1;
    }
    return t;
}

ad::Tensor positive_tensor(std::size_t rows, std::size_t cols, rng::Xoshiro256pp& gen) {
    ad::Tensor t(rows, cols);
    for (auto& v : t.data) v = 0.1 + std::fabs(gen.normal());
    return t;
}

struct OpCase {
    std::string name;
    // Builds tensors for one instance and returns (params, loss closure).
    std::function<Report(std::uint64_t seed, double eps, double tol)> run;
};

Report check_unary(ad::Tensor x, const std::function<ad::Var(ad::Graph&, ad::Var)>& op,
                   double eps, double tol) {
    x.enable_grad();
    auto loss_fn = [&]() {
        ad::Graph g;
        const ad::Var v = g.param(x);
        const ad::Var loss = g.reduce_sum(op(g, v));
        g.backward(loss);
        return g.value(loss).scalar_value();
    };
    return check_gradients({{"x", &x}}, loss_fn, eps, tol);
}

Report check_binary(ad::Tensor a, ad::Tensor b,
                    const std::function<ad::Var(ad::Graph&, ad::Var, ad::Var)>& op, double eps,
                    double tol) {
    a.enable_grad();
    b.enable_grad();
    auto loss_fn = [&]() {
        ad::Graph g;
        const ad::Var va = g.param(a);
        const ad::Var vb = g.param(b);
        const ad::Var loss = g.reduce_sum(op(g, va, vb));
        g.backward(loss);
        return g.value(loss).scalar_value();
    };
    return check_gradients({{"a", &a}, {"b", &b}}, loss_fn, eps, tol);
}

// Weighted reductions expose coordinate-dependent gradients (a plain sum
// would hide errors that redistribute gradient mass between coordinates).
ad::Var weighted(ad::Graph& g, ad::Var v, std::uint64_t seed) {
    const ad::Tensor& t = g.value(v);
    rng::Xoshiro256pp gen(rng::derive_seed(seed, 0xEE));
    ad::Tensor w(t.rows, t.cols);
    for (auto& x : w.data) x = gen.normal();
    return g.mul(v, g.constant(w));
}

struct LossCase {
    std::string name;
    std::function<Report(std::uint64_t seed, double eps, double tol)> run;
};

// A small model instance with every parameter perturbed away from its
// symmetric init so token and scalar gradients are exercised. Instances
// whose relu pre-activations sit near the kink are rerolled: a central
// difference stepping across the kink would report a bogus mismatch.
struct ModelFixture {
    model::ModelParams params;
    ad::Tensor x_image, x_tabular, y;
    std::vector<int> labels;

    explicit ModelFixture(std::uint64_t seed) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            build(rng::derive_seed(seed, 0xF1F0 + attempt));
            if (min_preactivation_magnitude() > 1e-3) break;
        }
    }

    std::vector<ParamRef> refs() {
        std::vector<ParamRef> out;
        for (auto& n : params.named()) out.push_back({n.name, n.tensor});
        return out;
    }

private:
    void build(std::uint64_t seed) {
        const std::size_t dim_c = 5, dim_t = 4, d_f = 6, d_p = 3, n = 4;
        params = model::init_params(dim_c, dim_t, d_f, d_p, rng::derive_seed(seed, 1));
        rng::Xoshiro256pp gen(rng::derive_seed(seed, 2));
        for (auto& v : params.token_image.data) v = 0.3 * gen.normal();
        for (auto& v : params.token_tabular.data) v = 0.3 * gen.normal();
        for (auto& v : params.fuse_bias.data) v = 0.1 * gen.normal();
        params.head_bias.data[0] = 0.1 * gen.normal();
        for (auto& v : params.proj_bias.data) v = 0.1 * gen.normal();
        params.log_scale.data[0] = std::log(2.0) + 0.2 * gen.normal();
        params.con_bias.data[0] = -1.0 + 0.2 * gen.normal();
        x_image = random_tensor(n, dim_c, gen);
        x_tabular = random_tensor(n, dim_t, gen);
        labels = {1, 0, 1, 0};
        y = ad::Tensor(n, 1);
        for (std::size_t i = 0; i < n; ++i) y.data[i] = labels[i];
    }

    // Smallest |pre-relu| over the three fusion inputs the losses visit.
    double min_preactivation_magnitude() const {
        const std::size_t n = x_image.rows;
        const std::size_t dim_c = x_image.cols, dim_t = x_tabular.cols;
        const std::size_t d_f = params.d_fuse();
        double min_abs = std::numeric_limits<double>::infinity();
        const auto visit = [&](const ad::Tensor& block_c, const ad::Tensor& block_t) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d_f; ++j) {
                    double pre = params.fuse_bias.data[j];
                    for (std::size_t k = 0; k < dim_c; ++k)
                        pre += block_c.at(i, k) * params.fuse_weight.at(k, j);
                    for (std::size_t k = 0; k < dim_t; ++k)
                        pre += block_t.at(i, k) * params.fuse_weight.at(dim_c + k, j);
                    min_abs = std::min(min_abs, std::fabs(pre));
                }
            }
        };
        ad::Tensor token_c_rows(n, dim_c), token_t_rows(n, dim_t);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < dim_c; ++k)
                token_c_rows.at(i, k) = params.token_image.data[k];
            for (std::size_t k = 0; k < dim_t; ++k)
                token_t_rows.at(i, k) = params.token_tabular.data[k];
        }
        visit(x_image, x_tabular);
        visit(x_image, token_t_rows);
        visit(token_c_rows, x_tabular);
        return min_abs;
    }
};

Report check_model_loss(std::uint64_t seed, double eps, double tol,
                        const std::function<ad::Var(ad::Graph&, const model::BoundModel&,
                                                    ModelFixture&)>& build) {
    ModelFixture fx(seed);
    auto loss_fn = [&]() {
        ad::Graph g;
        const auto bm = model::BoundModel::bind(g, fx.params);
        const ad::Var loss = build(g, bm, fx);
        g.backward(loss);
        return g.value(loss).scalar_value();
    };
    return check_gradients(fx.refs(), loss_fn, eps, tol);
}

std::vector<OpCase> op_cases(bool inject_fault) {
    std::vector<OpCase> cases;

    cases.push_back({"matmul", [inject_fault](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        ad::Tensor a = random_tensor(3, 4, gen);
        ad::Tensor b = random_tensor(4, 2, gen);
        a.enable_grad();
        b.enable_grad();
        auto loss_fn = [&]() {
            ad::Graph g;
            const ad::Var prod = g.matmul(g.param(a), g.param(b));
            const ad::Var loss = g.reduce_sum(weighted(g, prod, seed));
            g.backward(loss);
            if (inject_fault) {
                // Test hook: simulate a broken backward rule so the checker's
                // negative control has something to catch.
                for (auto& v : a.grad) v *= 1.01;
            }
            return g.value(loss).scalar_value();
        };
        return check_gradients({{"a", &a}, {"b", &b}}, loss_fn, eps, tol);
    }});

    cases.push_back({"transpose", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 5, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.transpose(v), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"add", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(3, 3, gen), random_tensor(3, 3, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.add(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"add_scalar_broadcast", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(3, 3, gen), random_tensor(1, 1, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.add(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"sub", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(2, 4, gen), random_tensor(2, 4, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.sub(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"mul", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(3, 3, gen), random_tensor(3, 3, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.mul(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"mul_scalar_broadcast", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(1, 1, gen), random_tensor(3, 4, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.mul(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"scalar_mul", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.scalar_mul(v, -1.7), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"neg", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(2, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) { return weighted(g, g.neg(v), seed); },
                           eps, tol);
    }});

    cases.push_back({"relu", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor_off_kink(4, 4, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.relu(v), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"sigmoid", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.sigmoid(v), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"log", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(positive_tensor(3, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) { return weighted(g, g.log(v), seed); },
                           eps, tol);
    }});

    cases.push_back({"exp", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) { return weighted(g, g.exp(v), seed); },
                           eps, tol);
    }});

    cases.push_back({"softplus", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 3, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.softplus(v), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"concat_cols", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_binary(random_tensor(3, 2, gen), random_tensor(3, 4, gen),
                            [seed](ad::Graph& g, ad::Var a, ad::Var b) {
                                return weighted(g, g.concat_cols(a, b), seed);
                            },
                            eps, tol);
    }});

    cases.push_back({"broadcast_rows", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(1, 5, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.broadcast_rows(v, 4), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"l2_normalize_rows", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(2, 5, gen),
                           [seed](ad::Graph& g, ad::Var v) {
                               return weighted(g, g.l2_normalize_rows(v), seed);
                           },
                           eps, tol);
    }});

    cases.push_back({"reduce_sum", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 4, gen),
                           [](ad::Graph& g, ad::Var v) { return g.reduce_sum(v); }, eps, tol);
    }});

    cases.push_back({"reduce_mean", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(3, 4, gen),
                           [](ad::Graph& g, ad::Var v) { return g.reduce_mean(v); }, eps, tol);
    }});

    cases.push_back({"reduce_sum_sym", [](std::uint64_t seed, double eps, double tol) {
        rng::Xoshiro256pp gen(seed);
        return check_unary(random_tensor(4, 4, gen),
                           [](ad::Graph& g, ad::Var v) { return g.reduce_sum_sym(v); }, eps, tol);
    }});

    return cases;
}

std::vector<LossCase> loss_cases() {
    std::vector<LossCase> cases;

    cases.push_back({"loss_base", [](std::uint64_t seed, double eps, double tol) {
        return check_model_loss(seed, eps, tol,
                                [](ad::Graph& g, const model::BoundModel& bm, ModelFixture& fx) {
                                    return losses::loss_base_mode(
                                        g, bm, g.constant(fx.x_image), g.constant(fx.x_tabular),
                                        g.constant(fx.y), InferenceMode::Both,
                                        TokenPolicy::LearnedToken);
                                });
    }});

    const struct {
        const char* name;
        losses::ModalitySubset subset;
    } md_arms[] = {{"loss_md_image", losses::ModalitySubset::ImageOnly},
                   {"loss_md_tabular", losses::ModalitySubset::TabularOnly},
                   {"loss_md_both", losses::ModalitySubset::Both}};
    for (const auto& arm : md_arms) {
        const auto subset = arm.subset;
        cases.push_back({arm.name, [subset](std::uint64_t seed, double eps, double tol) {
            return check_model_loss(
                seed, eps, tol,
                [subset](ad::Graph& g, const model::BoundModel& bm, ModelFixture& fx) {
                    return losses::loss_md_subset(g, bm, g.constant(fx.x_image),
                                                  g.constant(fx.x_tabular), g.constant(fx.y),
                                                  subset, TokenPolicy::LearnedToken);
                });
        }});
    }

    for (const double lambda : {0.0, 1.0, 2.0}) {
        char name[32];
        std::snprintf(name, sizeof(name), "loss_smd_lambda_%g", lambda);
        cases.push_back({name, [lambda](std::uint64_t seed, double eps, double tol) {
            return check_model_loss(
                seed, eps, tol,
                [lambda](ad::Graph& g, const model::BoundModel& bm, ModelFixture& fx) {
                    return losses::loss_smd(g, bm, g.constant(fx.x_image),
                                            g.constant(fx.x_tabular), g.constant(fx.y), lambda,
                                            TokenPolicy::LearnedToken);
                });
        }});
    }

    cases.push_back({"loss_con", [](std::uint64_t seed, double eps, double tol) {
        return check_model_loss(
            seed, eps, tol, [](ad::Graph& g, const model::BoundModel& bm, ModelFixture& fx) {
                const ad::Var xc = g.constant(fx.x_image);
                const ad::Var xt = g.constant(fx.x_tabular);
                const ad::Var z_c = model::forward_repr(g, bm, xc, xt, model::ReprKind::Image);
                const ad::Var z_t = model::forward_repr(g, bm, xc, xt, model::ReprKind::Tabular);
                const ad::Tensor a = losses::pair_labeling(fx.labels);
                return losses::loss_con(g, z_c, z_t, a, g.exp(bm.log_scale), bm.con_bias);
            });
    }});

    cases.push_back({"loss_con_hat", [](std::uint64_t seed, double eps, double tol) {
        return check_model_loss(
            seed, eps, tol, [](ad::Graph& g, const model::BoundModel& bm, ModelFixture& fx) {
                const ad::Var xc = g.constant(fx.x_image);
                const ad::Var xt = g.constant(fx.x_tabular);
                const ad::Var z_c = model::forward_repr(g, bm, xc, xt, model::ReprKind::Image);
                const ad::Var z_t = model::forward_repr(g, bm, xc, xt, model::ReprKind::Tabular);
                const ad::Var z_f = model::forward_repr(g, bm, xc, xt, model::ReprKind::Fused);
                const ad::Tensor a = losses::pair_labeling(fx.labels);
                return losses::loss_con_hat(g, z_c, z_t, z_f, a, g.exp(bm.log_scale),
                                            bm.con_bias);
            });
    }});

    return cases;
}

} // namespace

SuiteReport run_gradient_suite(std::size_t n_seeds, double eps, double tol, bool inject_fault,
                               std::uint64_t base_seed) {
    SuiteReport report;
    report.eps = eps;
    report.tol = tol;
    const std::uint64_t op_base = 0x5EED0000ULL + rng::SplitMix64(base_seed).next() % (1u << 20);
    const std::uint64_t loss_base = 0x10550000ULL + rng::SplitMix64(~base_seed).next() % (1u << 20);

    for (const OpCase& c : op_cases(inject_fault)) {
        SuiteEntry entry;
        entry.name = "op/" + c.name;
        entry.passed = true;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const Report r = c.run(op_base + s, eps, tol);
            entry.max_rel_err = std::max(entry.max_rel_err, r.max_rel_err);
            entry.coords_checked += r.coords_checked;
            if (!r.ok()) entry.passed = false;
        }
        report.entries.push_back(std::move(entry));
    }

    for (const LossCase& c : loss_cases()) {
        SuiteEntry entry;
        entry.name = "loss/" + c.name;
        entry.passed = true;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const Report r = c.run(loss_base + s, eps, tol);
            entry.max_rel_err = std::max(entry.max_rel_err, r.max_rel_err);
            entry.coords_checked += r.coords_checked;
            if (!r.ok()) entry.passed = false;
        }
        report.entries.push_back(std::move(entry));
    }

    return report;
}

} // namespace mmfuse::gradcheck
