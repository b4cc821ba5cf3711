#include "mmfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmfuse::gradcheck {

namespace {

double scaled_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

} // namespace

bool SuiteReport::all_passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const SuiteEntry& e) { return e.passed; });
}

Report check_gradients(const std::vector<ParamRef>& params,
                       const std::function<double()>& loss_fn,
                       double eps,
                       double tol) {
    if (!(eps > 0.0 && eps <= 1e-2)) {
        throw ContractError("check_gradients: eps must be in (0, 1e-2]");
    }

    for (const ParamRef& p : params) {
        if (p.tensor == nullptr || !p.tensor->requires_grad) {
            throw ContractError("check_gradients: parameter '" + p.name +
                                "' must track gradients");
        }
        p.tensor->zero_grad();
    }

    const double base = loss_fn();
    if (!std::isfinite(base)) {
        throw NumericError("check_gradients: non-finite loss at the unperturbed point");
    }

    // Snapshot analytic gradients before the perturbed evaluations overwrite
    // the buffers.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const ParamRef& p : params) analytic.push_back(p.tensor->grad);

    Report report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ad::Tensor& t = *params[pi].tensor;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + eps;
            const double plus = loss_fn();
            t.data[i] = saved - eps;
            const double minus = loss_fn();
            t.data[i] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw NumericError("check_gradients: non-finite loss while perturbing '" +
                                   params[pi].name + "'");
            }
            const double numeric = (plus - minus) / (2.0 * eps);
            const double err = scaled_error(analytic[pi][i], numeric);
            report.max_rel_err = std::max(report.max_rel_err, err);
            ++report.coords_checked;
            if (err > tol) {
                report.failures.push_back({params[pi].name, i, analytic[pi][i], numeric, err});
            }
        }
    }
    // Restore the analytic gradients so callers can inspect them afterwards.
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        params[pi].tensor->grad = analytic[pi];
    }
    return report;
}

} // namespace mmfuse::gradcheck
