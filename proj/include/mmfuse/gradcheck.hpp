#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse::gradcheck {

struct FailingCoord {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;
};

struct Report {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    std::vector<FailingCoord> failures;

    bool ok() const { return failures.empty(); }
};

struct ParamRef {
    std::string name;
    ad::Tensor* tensor = nullptr;
};

// Central finite-difference check of analytic gradients.
//
// `loss_fn` must build a fresh graph from the current parameter values, run
// backward (accumulating into the parameters' grad buffers), and return the
// scalar loss. It must be deterministic. The checker zeroes the grads, calls
// loss_fn once for the analytic gradient, then perturbs each coordinate by
// +/-eps for the central difference. Errors are scaled by max(1, |a|, |n|)
// so near-zero gradients are compared absolutely.
Report check_gradients(const std::vector<ParamRef>& params,
                       const std::function<double()>& loss_fn,
                       double eps,
                       double tol);

// One line of the op/loss verification suite.
struct SuiteEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    bool passed = false;
};

struct SuiteReport {
    std::vector<SuiteEntry> entries;
    double eps = 0.0;
    double tol = 0.0;

    bool all_passed() const;
};

// Runs finite-difference checks over every registered autodiff op and every
// training loss (base, conventional dropout per subset, simultaneous dropout
// at lambda in {0,1,2}, pairwise contrastive, extended contrastive) across
// `n_seeds` random instances each, offset by `base_seed`. `inject_fault`
// corrupts one backward rule so a broken checker cannot pass silently.
SuiteReport run_gradient_suite(std::size_t n_seeds, double eps, double tol, bool inject_fault,
                               std::uint64_t base_seed = 0);

} // namespace mmfuse::gradcheck
