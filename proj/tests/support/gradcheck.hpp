#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pitn/autodiff.hpp"

namespace pitn::testing {

/// Builds a scalar loss on `tape` from leaves created for each input tensor.
using LossBuilder = std::function<ad::Var(ad::Tape& tape, const std::vector<ad::Var>& leaves)>;

/// ||a - b||_2 / max(||a||_2, ||b||_2), with a small floor so that two
/// vanishing gradients compare equal.
inline double relative_error(const Tensor& a, const Tensor& b)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
    return std::sqrt(diff) / denom;
}

inline double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs)
{
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs)
        leaves.push_back(tape.constant(t));
    return build(tape, leaves).value().item();
}

inline std::vector<Tensor> analytic_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs)
{
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs)
        leaves.push_back(tape.variable(t));
    const ad::Var loss = build(tape, leaves);
    const ad::Gradients grads = tape.backward(loss);
    std::vector<Tensor> out;
    for (const ad::Var& v : leaves)
        out.push_back(grads[v]);
    return out;
}

/// Central differences with step h for every element of every input.
inline std::vector<Tensor> numeric_gradients(const LossBuilder& build, std::vector<Tensor> inputs, double h = 1e-6)
{
    std::vector<Tensor> out;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor g = Tensor::zeros_like(inputs[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double up = evaluate(build, inputs);
            inputs[k][i] = saved - h;
            const double down = evaluate(build, inputs);
            inputs[k][i] = saved;
            g[i] = (up - down) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Per-input relative error between tape and finite-difference gradients.
inline std::vector<double> gradient_errors(const LossBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-6)
{
    const auto analytic = analytic_gradients(build, inputs);
    const auto numeric = numeric_gradients(build, inputs, h);
    std::vector<double> errs;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        errs.push_back(relative_error(analytic[k], numeric[k]));
    return errs;
}

inline double max_gradient_error(const LossBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-6)
{
    const auto errs = gradient_errors(build, inputs, h);
    return errs.empty() ? 0.0 : *std::max_element(errs.begin(), errs.end());
}

/// Central differences of f() with respect to every element of t, which is
/// perturbed in place and restored.
inline Tensor numeric_gradient(const std::function<double()>& f, Tensor& t, double h = 1e-6)
{
    Tensor g = Tensor::zeros_like(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double saved = t[i];
        t[i] = saved + h;
        const double up = f();
        t[i] = saved - h;
        const double down = f();
        t[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data())
        v = dist(rng);
    return t;
}

}  // namespace pitn::testing
