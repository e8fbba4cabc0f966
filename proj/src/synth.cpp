#include "pitn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace pitn {

double BpMap::sbp_of(const Features& u) const
{
    return sbp[0] + sbp[1] * u[0] + sbp[2] * u[1] + sbp[3] * u[2] + sbp_interaction * u[0] * u[2];
}

double BpMap::dbp_of(const Features& u) const
{
    return dbp[0] + dbp[1] * u[0] + dbp[2] * u[1] + dbp[3] * u[2] + dbp_interaction * u[0] * u[2];
}

BpMap BpMap::affine()
{
    BpMap m;
    m.sbp_interaction = 0.0;
    m.dbp_interaction = 0.0;
    return m;
}

namespace {

struct Bump {
    double mu;
    double amp;
    double left;
    double right;
};

// Sum of asymmetric Gaussian bumps and its first two time derivatives.
class Waveform {
public:
    explicit Waveform(std::vector<Bump> bumps) : bumps_(std::move(bumps))
    {
        std::sort(bumps_.begin(), bumps_.end(), [](const Bump& a, const Bump& b) { return a.mu < b.mu; });
        double widest = 0.0;
        for (const Bump& b : bumps_)
            widest = std::max({widest, b.left, b.right});
        reach_ = 12.0 * widest;
    }

    double eval(double t, int order) const
    {
        auto it = std::lower_bound(bumps_.begin(), bumps_.end(), t - reach_,
                                   [](const Bump& b, double v) { return b.mu < v; });
        double acc = 0.0;
        for (; it != bumps_.end() && it->mu <= t + reach_; ++it) {
            const double sigma = t < it->mu ? it->left : it->right;
            const double z = (t - it->mu) / sigma;
            const double g = it->amp * std::exp(-0.5 * z * z);
            if (order == 0)
                acc += g;
            else if (order == 1)
                acc += -g * z / sigma;
            else
                acc += g * (z * z - 1.0) / (sigma * sigma);
        }
        return acc;
    }

private:
    std::vector<Bump> bumps_;
    double reach_ = 0.0;
};

// Root of f on [a, b] given a sign change.
template <typename F>
double bisect(F f, double a, double b)
{
    double fa = f(a);
    for (int i = 0; i < 200 && b - a > 1e-13; ++i) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if ((fm > 0.0) == (fa > 0.0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

void validate(const SynthConfig& cfg)
{
    const Morphology& m = cfg.morphology;
    if (cfg.n_beats < 1)
        throw ConfigError("synth: n_beats must be at least 1");
    if (!(cfg.sample_rate_hz > 0.0) || !(cfg.base_period_s > 0.0) || !(cfg.amplitude > 0.0))
        throw ConfigError("synth: sample rate, base period and amplitude must be positive");
    if (!(m.systolic_left > 0.0 && m.systolic_right > 0.0 && m.reflection_left > 0.0 && m.reflection_right > 0.0))
        throw ConfigError("synth: bump widths must be positive");
    if (!(m.reflection_delay > 0.0 && m.reflection_delay < 1.0) || m.reflection_ratio < 0.0)
        throw ConfigError("synth: reflection delay must lie in (0, 1) and its ratio be non-negative");
    const DriftConfig& d = cfg.drift;
    if (d.rate < 0.0 || d.amplitude_depth < 0.0 || d.amplitude_depth >= 1.0 || d.period_depth < 0.0 ||
        d.period_depth >= 1.0 || d.delay_depth < 0.0 || d.delay_depth >= 1.0)
        throw ConfigError("synth: drift rate must be non-negative and depths in [0, 1)");
    if (cfg.noise_std < 0.0)
        throw ConfigError("synth: noise_std must be non-negative");
}

}  // namespace

SynthOutput generate(const SynthConfig& cfg, const SegmentConfig& seg)
{
    validate(cfg);
    const Morphology& m = cfg.morphology;
    const std::size_t beats = cfg.n_beats + 1;  // one extra beat closes the last window

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double phi_amp = phase(rng), phi_period = phase(rng), phi_delay = phase(rng);
    const double w = 2.0 * std::numbers::pi * cfg.drift.rate;

    std::vector<double> mu(beats), period(beats);
    std::vector<Bump> bumps;
    double t = 0.5 * cfg.base_period_s;
    for (std::size_t k = 0; k < beats; ++k) {
        const auto kd = static_cast<double>(k);
        const double amp = cfg.amplitude * (1.0 + cfg.drift.amplitude_depth * std::sin(w * kd + phi_amp));
        const double p = cfg.base_period_s * (1.0 + cfg.drift.period_depth * std::sin(0.77 * w * kd + phi_period));
        const double delay = m.reflection_delay * (1.0 + cfg.drift.delay_depth * std::sin(1.29 * w * kd + phi_delay));
        mu[k] = t;
        period[k] = p;
        bumps.push_back({t, amp, m.systolic_left * p, m.systolic_right * p});
        bumps.push_back({t + delay * p, m.reflection_ratio * amp, m.reflection_left * p, m.reflection_right * p});
        t += p;
    }
    const Waveform wave(bumps);
    const double t_end = mu.back() + 0.6 * period.back();

    SynthOutput out;
    RawRecording& rec = out.recording;
    rec.subject_id = cfg.subject_id;
    rec.sample_rate_hz = cfg.sample_rate_hz;
    const auto n_samples = static_cast<std::size_t>(std::floor(t_end * cfg.sample_rate_hz)) + 1;
    rec.samples = Tensor(Shape{n_samples, 1});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double ti = static_cast<double>(i) / cfg.sample_rate_hz;
        double v = cfg.baseline + wave.eval(ti, 0);
        if (cfg.noise_std > 0.0)
            v += cfg.noise_std * noise(rng);
        rec.samples[i] = v;
    }

    const auto d1 = [&wave](double x) { return wave.eval(x, 1); };
    const auto d2 = [&wave](double x) { return wave.eval(x, 2); };

    std::vector<double> peak(beats);
    for (std::size_t k = 0; k < beats; ++k)
        peak[k] = bisect(d1, mu[k] - 0.5 * m.systolic_left * period[k], mu[k] + 0.5 * m.systolic_right * period[k]);

    std::vector<double> intervals;
    for (std::size_t k = 0; k + 1 < beats; ++k)
        intervals.push_back(peak[k + 1] - peak[k]);
    std::vector<double> sorted(intervals);
    std::sort(sorted.begin(), sorted.end());
    const double median_samples = sorted[sorted.size() / 2] * cfg.sample_rate_hz;
    const double lead_s = static_cast<double>(std::llround(seg.lead_fraction * median_samples)) / cfg.sample_rate_hz;

    constexpr std::size_t grid = 4000;
    for (std::size_t k = 0; k < cfg.n_beats; ++k) {
        const double start = peak[k] - lead_s;
        const double end = peak[k + 1] - lead_s;
        const double step = (end - peak[k]) / static_cast<double>(grid);
        std::vector<double> ts(grid + 1), ds(grid + 1);
        for (std::size_t i = 0; i <= grid; ++i) {
            ts[i] = peak[k] + step * static_cast<double>(i);
            ds[i] = d1(ts[i]);
        }
        const std::string where = "synth: beat " + std::to_string(k) + ": ";

        std::size_t ib = grid;
        for (std::size_t i = 1; i < grid; ++i)
            if (ds[i] < 0.0 && ds[i + 1] >= 0.0) {
                ib = i;
                break;
            }
        if (ib == grid)
            throw ConfigError(where + "no waveform trough between the bumps (landmark B)");
        const double t_b = bisect(d1, ts[ib], ts[ib + 1]);

        std::size_t jf = ib + 1;
        for (std::size_t i = ib + 1; i <= grid; ++i)
            if (ds[i] < ds[jf])
                jf = i;
        if (jf >= grid)
            throw ConfigError(where + "derivative minimum at the window edge (landmark F)");
        const double t_f = bisect(d2, ts[jf - 1], ts[jf + 1]);

        std::size_t jj = jf + 1;
        for (std::size_t i = jf + 1; i <= grid; ++i)
            if (ds[i] > ds[jj])
                jj = i;
        if (jj >= grid || jj == jf + 1)
            throw ConfigError(where + "derivative maximum at the window edge (landmark J)");
        const double t_j = bisect(d2, ts[jj - 1], ts[jj + 1]);

        if (!(peak[k] < t_b && t_b < t_f && t_f < t_j && t_j < end))
            throw ConfigError(where + "landmark ordering violated");

        BeatRecord beat;
        beat.beat_index = static_cast<std::int64_t>(k);
        beat.duration_s = end - start;
        beat.x = Tensor(Shape{seg.fixed_len, 1});
        for (std::size_t i = 0; i < seg.fixed_len; ++i)
            beat.x[i] = cfg.baseline +
                        wave.eval(start + beat.duration_s * static_cast<double>(i) / static_cast<double>(seg.fixed_len - 1), 0);

        double lo = wave.eval(start, 0), hi = lo;
        for (std::size_t i = 0; i <= grid; ++i) {
            const double v = wave.eval(start + (end - start) * static_cast<double>(i) / grid, 0);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        hi = std::max(hi, wave.eval(peak[k], 0));
        beat.u = {hi - lo, 1.0 / (t_f - t_b), 60.0 / (t_j - peak[k])};
        beat.sbp = cfg.bp_map.sbp_of(beat.u);
        beat.dbp = cfg.bp_map.dbp_of(beat.u);
        if (!(beat.sbp > beat.dbp))
            throw ConfigError(where + "bp map gives SBP <= DBP");

        out.landmarks.push_back({peak[k] - start, t_b - start, t_f - start, t_j - start});
        rec.labels.push_back({beat.beat_index, beat.sbp, beat.dbp});
        out.truth.push_back(std::move(beat));
    }
    return out;
}

}  // namespace pitn
