#include "pitn/adversarial.hpp"

#include <algorithm>
#include <cmath>

namespace pitn {

void PgdConfig::validate() const
{
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
        throw ConfigError("pgd epsilon must be a finite value >= 0");
    if (steps == 0)
        throw ConfigError("pgd steps must be at least 1");
    if (eta && (!(*eta >= 0.0) || !std::isfinite(*eta)))
        throw ConfigError("pgd step size eta must be a finite value >= 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw ConfigError("pgd sigma must be a finite value >= 0");
}

Tensor clip_to_domain(const Tensor& x, const DomainBounds& domain)
{
    if (x.rank() != 2 || domain.lo.size() != x.dim(1) || domain.hi.size() != x.dim(1))
        throw DimensionError("domain bounds do not match waveform shape " + shape_string(x.shape()));
    Tensor out = x;
    for (std::size_t t = 0; t < x.dim(0); ++t)
        for (std::size_t c = 0; c < x.dim(1); ++c) {
            if (domain.lo[c] > domain.hi[c])
                throw ConfigError("domain lower bound exceeds upper bound on channel " + std::to_string(c));
            out.at(t, c) = std::clamp(x.at(t, c), domain.lo[c], domain.hi[c]);
        }
    return out;
}

Tensor pgd_generate(const Tensor& x, const DomainBounds& domain, const PgdConfig& cfg, const InputGradientFn& grad,
                    std::mt19937_64& rng)
{
    cfg.validate();
    const double eta = cfg.step_size();

    Tensor adv = x;
    if (cfg.sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.sigma);
        for (double& v : adv.data())
            v += noise(rng);
    }
    adv = clip_to_domain(adv, domain);

    Tensor g;
    if (!cfg.grad_at_adversarial)
        g = grad(x);
    for (std::size_t i = 0; i < cfg.steps; ++i) {
        if (cfg.grad_at_adversarial)
            g = grad(adv);
        if (g.shape() != x.shape())
            throw DimensionError("pgd gradient shape " + shape_string(g.shape()) + " does not match waveform " +
                                 shape_string(x.shape()));
        for (std::size_t k = 0; k < adv.size(); ++k) {
            const double s = g[k] > 0.0 ? 1.0 : (g[k] < 0.0 ? -1.0 : 0.0);
            adv[k] += eta * s;
        }
        adv = clip_to_domain(adv, domain);
    }

    if (cfg.project_epsilon) {
        for (std::size_t k = 0; k < adv.size(); ++k)
            adv[k] = std::clamp(adv[k], x[k] - cfg.epsilon, x[k] + cfg.epsilon);
        adv = clip_to_domain(adv, domain);
    }
    return adv;
}

Tensor pgd_generate(const Tensor& x, const Tensor& u, const ModelState& state, const DomainBounds& domain,
                    const PgdConfig& cfg, std::mt19937_64& rng)
{
    const auto grad = [&](const Tensor& at) { return grad_wrt_inputs(state, at, u, LnRoute::Auxiliary).grad_x; };
    return pgd_generate(x, domain, cfg, grad, rng);
}

std::mt19937_64 beat_stream(std::uint64_t seed, std::uint64_t epoch, std::int64_t beat_index)
{
    const auto b = static_cast<std::uint64_t>(beat_index);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

Tensor flip_waveform(const Tensor& x)
{
    if (x.rank() != 2)
        throw DimensionError("flip_waveform expects [T x C], got " + shape_string(x.shape()));
    Tensor out(x.shape());
    const std::size_t T = x.dim(0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < x.dim(1); ++c)
            out.at(t, c) = x.at(T - 1 - t, c);
    return out;
}

}  // namespace pitn
