#include "mmfuse/optim.hpp"

#include <cmath>

namespace mmfuse::optim {

AdamW::AdamW(std::vector<ParamSpec> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1),
      beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamSpec& p : params_) {
        if (p.tensor == nullptr || !p.tensor->requires_grad ||
            p.tensor->grad.size() != p.tensor->data.size()) {
            throw ContractError("AdamW: parameter '" + p.name +
                                "' must track gradients with an allocated buffer");
        }
        m_.emplace_back(p.tensor->size(), 0.0);
        v_.emplace_back(p.tensor->size(), 0.0);
    }
}

void AdamW::step() {
    for (const ParamSpec& p : params_) {
        for (double gv : p.tensor->grad) {
            if (!std::isfinite(gv)) {
                throw NumericError("AdamW: non-finite gradient in '" + p.name +
                                   "', step aborted");
            }
        }
    }

    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));

    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        ad::Tensor& t = *params_[pi].tensor;
        const double wd = params_[pi].weight_decay ? weight_decay_ : 0.0;
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double grad = t.grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad * grad;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            t.data[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + wd * t.data[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (const ParamSpec& p : params_) p.tensor->zero_grad();
}

} // namespace mmfuse::optim
