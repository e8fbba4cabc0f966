#pragma once

#include <vector>

#include "pitn/tensor.hpp"

namespace pitn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {});

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace pitn
