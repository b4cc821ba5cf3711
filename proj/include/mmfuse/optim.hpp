#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse::optim {

struct ParamSpec {
    std::string name;
    ad::Tensor* tensor = nullptr;
    bool weight_decay = true;
};

// AdamW with decoupled weight decay. Decay is applied only to parameters
// registered with weight_decay=true; tokens, biases and the contrastive
// scalars stay undecayed so training is not biased back toward the zero-fill
// regime.
class AdamW {
public:
    AdamW(std::vector<ParamSpec> params, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    // One update from the parameters' current grad buffers. Throws
    // NumericError on any non-finite gradient before touching any state
    // (the step is atomic).
    void step();

    void zero_grad();

    std::size_t step_count() const { return step_; }
    const std::vector<ParamSpec>& params() const { return params_; }

private:
    std::vector<ParamSpec> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    std::size_t step_ = 0;
};

} // namespace mmfuse::optim
