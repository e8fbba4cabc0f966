#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>

#include "pitn/model.hpp"
#include "pitn/signal.hpp"
#include "pitn/tensor.hpp"

namespace pitn {

struct PgdConfig {
    double epsilon = 0.2;
    std::size_t steps = 2;
    std::optional<double> eta;  // step size; defaults to epsilon / steps
    double sigma = 0.01;        // std of the random start
    bool project_epsilon = true;
    bool grad_at_adversarial = false;  // re-evaluate the gradient at each iterate

    double step_size() const { return eta ? *eta : epsilon / static_cast<double>(steps); }
    /// Throws ConfigError on negative epsilon, eta or sigma, or zero steps.
    void validate() const;
};

/// Gradient of the model output with respect to the waveform at x.
using InputGradientFn = std::function<Tensor(const Tensor& x)>;

/// Elementwise clamp of a [T x C] waveform into per-channel bounds.
Tensor clip_to_domain(const Tensor& x, const DomainBounds& domain);

/// Projected gradient ascent on the waveform: random start, sign steps and a
/// clip into the domain after each step. sign(0) is 0.
Tensor pgd_generate(const Tensor& x, const DomainBounds& domain, const PgdConfig& cfg, const InputGradientFn& grad,
                    std::mt19937_64& rng);

/// PGD against a model, taking gradients through the auxiliary LN route.
Tensor pgd_generate(const Tensor& x, const Tensor& u, const ModelState& state, const DomainBounds& domain,
                    const PgdConfig& cfg, std::mt19937_64& rng);

/// Independent stream for one beat in one epoch.
std::mt19937_64 beat_stream(std::uint64_t seed, std::uint64_t epoch, std::int64_t beat_index);

/// Time reversal of a [T x C] waveform.
Tensor flip_waveform(const Tensor& x);

}  // namespace pitn
