#include "pitn/optim.hpp"

#include <cmath>

namespace pitn {

Adam::Adam(AdamConfig cfg) : cfg_(cfg)
{
    if (!(cfg_.learning_rate > 0.0) || !std::isfinite(cfg_.learning_rate))
        throw ConfigError("learning rate must be a positive finite value");
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads)
{
    if (params.size() != grads.size())
        throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                             std::to_string(grads.size()) + " gradients");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros_like(*p));
            v_.push_back(Tensor::zeros_like(*p));
        }
    }
    if (m_.size() != params.size())
        throw DimensionError("adam: parameter list changed between steps");

    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (g.size() != p.size() || m_[i].size() != p.size())
            throw DimensionError("adam: gradient shape " + shape_string(g.shape()) + " does not match parameter " +
                                 shape_string(p.shape()));
        for (std::size_t k = 0; k < p.size(); ++k) {
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double m_hat = m_[i][k] / c1;
            const double v_hat = v_[i][k] / c2;
            p[k] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

}  // namespace pitn
