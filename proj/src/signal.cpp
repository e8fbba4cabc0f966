#include "pitn/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <unordered_map>

namespace pitn {

std::string to_string(BpType type)
{
    return type == BpType::Sbp ? "sbp" : "dbp";
}

BpType parse_bp_type(const std::string& text)
{
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "sbp")
        return BpType::Sbp;
    if (lower == "dbp")
        return BpType::Dbp;
    throw std::invalid_argument("unknown bp type '" + text + "' (expected sbp or dbp)");
}

double BeatRecord::sample_period() const
{
    if (x.rank() != 2 || x.dim(0) < 2)
        throw std::invalid_argument("beat must hold at least two samples");
    if (!(duration_s > 0.0))
        throw std::invalid_argument("beat " + std::to_string(beat_index) + " has non-positive duration");
    return duration_s / static_cast<double>(x.dim(0) - 1);
}

std::vector<double> smoothed_derivative(std::span<const double> x, double dt)
{
    const std::size_t n = x.size();
    std::vector<double> raw(n, 0.0);
    if (n < 2)
        return raw;
    if (n == 2) {
        raw[0] = raw[1] = (x[1] - x[0]) / dt;
    } else {
        raw[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
        raw[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (i >= 2 && i + 2 < n)
                raw[i] = (-x[i + 2] + 8.0 * x[i + 1] - 8.0 * x[i - 1] + x[i - 2]) / (12.0 * dt);
            else
                raw[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
        }
    }

    constexpr std::size_t half = 2;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double acc = 0.0;
        for (std::size_t j = lo; j <= hi; ++j)
            acc += raw[j];
        out[i] = acc / static_cast<double>(hi - lo + 1);
    }
    return out;
}

std::vector<double> resample_linear(std::span<const double> x, double first, double last, std::size_t n)
{
    if (x.empty() || n == 0)
        throw std::invalid_argument("resample_linear: empty input or output");
    std::vector<double> out(n);
    const double max_pos = static_cast<double>(x.size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        const double pos = std::clamp(first + frac * (last - first), 0.0, max_pos);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, x.size() - 1);
        const double w = pos - static_cast<double>(lo);
        out[i] = (1.0 - w) * x[lo] + w * x[hi];
    }
    return out;
}

namespace {

double percentile(std::vector<double> values, double pct)
{
    std::sort(values.begin(), values.end());
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * values[lo] + w * values[hi];
}

std::vector<double> column(const Tensor& m, std::size_t c)
{
    std::vector<double> out(m.dim(0));
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = m.at(t, c);
    return out;
}

// Sub-sample position of the extremum at i from a parabola through i-1, i, i+1.
double parabolic_peak(const std::vector<double>& d, std::size_t i)
{
    const double a = d[i - 1], b = d[i], c = d[i + 1];
    const double denom = a - 2.0 * b + c;
    if (denom == 0.0)
        return static_cast<double>(i);
    return static_cast<double>(i) + std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

}  // namespace

std::vector<std::size_t> detect_peaks(std::span<const double> x, double sample_rate_hz, const SegmentConfig& cfg,
                                      Diagnostics* diag)
{
    if (!(sample_rate_hz > 0.0))
        throw IngestError("sample rate must be positive");
    const std::size_t n = x.size();
    if (n < 8) {
        warn(diag, "recording too short for beat detection");
        return {};
    }
    std::vector<double> sig(x.begin(), x.end());
    if (cfg.invert)
        for (double& v : sig)
            v = -v;
    const std::vector<double> d = smoothed_derivative(sig, 1.0 / sample_rate_hz);

    const double ref = percentile(d, cfg.upstroke_percentile);
    if (!(ref > 0.0)) {
        warn(diag, "no oscillation found; no beats detected");
        return {};
    }
    const double threshold = cfg.upstroke_fraction * ref;
    const auto refractory = static_cast<std::size_t>(std::llround(cfg.refractory_s * sample_rate_hz));

    std::vector<std::size_t> upstrokes;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(d[i] > threshold && d[i] >= d[i - 1] && d[i] > d[i + 1]))
            continue;
        if (!upstrokes.empty() && i - upstrokes.back() < refractory) {
            if (d[i] > d[upstrokes.back()])
                upstrokes.back() = i;
            continue;
        }
        upstrokes.push_back(i);
    }

    std::vector<std::size_t> peaks;
    for (std::size_t k = 0; k < upstrokes.size(); ++k) {
        const std::size_t limit = k + 1 < upstrokes.size() ? upstrokes[k + 1] : n - 1;
        for (std::size_t j = upstrokes[k]; j < limit; ++j) {
            if (d[j] > 0.0 && d[j + 1] <= 0.0) {
                peaks.push_back(sig[j + 1] > sig[j] ? j + 1 : j);
                break;
            }
        }
    }
    if (peaks.size() < 2)
        warn(diag, "fewer than two systolic peaks detected; no beats detected");
    return peaks;
}

std::vector<BeatRecord> segment_beats(const RawRecording& rec, const SegmentConfig& cfg, Diagnostics* diag)
{
    if (rec.samples.rank() != 2 || rec.length() < 2)
        throw IngestError("recording " + rec.subject_id + " holds no samples");
    if (cfg.channel >= rec.channels())
        throw IngestError("detection channel " + std::to_string(cfg.channel) + " out of range");
    if (cfg.fixed_len < 8)
        throw std::invalid_argument("fixed_len must be at least 8");

    const std::vector<double> det = column(rec.samples, cfg.channel);
    const std::vector<std::size_t> peaks = detect_peaks(det, rec.sample_rate_hz, cfg, diag);
    if (peaks.size() < 2)
        return {};

    std::vector<double> intervals;
    for (std::size_t k = 0; k + 1 < peaks.size(); ++k)
        intervals.push_back(static_cast<double>(peaks[k + 1] - peaks[k]));
    std::nth_element(intervals.begin(), intervals.begin() + static_cast<std::ptrdiff_t>(intervals.size() / 2),
                     intervals.end());
    const double median = intervals[intervals.size() / 2];
    const auto lead = static_cast<std::size_t>(std::llround(cfg.lead_fraction * median));

    const std::size_t windows = peaks.size() - 1;
    std::unordered_map<std::int64_t, BeatLabel> labels;
    if (!rec.labels.empty()) {
        if (rec.labels.size() != windows)
            throw IngestError("subject " + rec.subject_id + ": " + std::to_string(rec.labels.size()) +
                              " labels but " + std::to_string(windows) + " detected beats");
        for (const BeatLabel& l : rec.labels)
            labels[l.beat_index] = l;
    }

    std::vector<std::vector<double>> channels;
    for (std::size_t c = 0; c < rec.channels(); ++c)
        channels.push_back(column(rec.samples, c));

    std::vector<BeatRecord> beats;
    for (std::size_t k = 0; k < windows; ++k) {
        const std::size_t s0 = peaks[k] >= lead ? peaks[k] - lead : 0;
        const std::size_t s1 = peaks[k + 1] - lead;
        const double duration = static_cast<double>(s1 - s0) / rec.sample_rate_hz;
        const double bpm = 60.0 / duration;
        if (!(bpm > cfg.min_bpm && bpm < cfg.max_bpm)) {
            warn(diag, "beat " + std::to_string(k) + " dropped: implausible rate " + std::to_string(bpm) + " bpm");
            continue;
        }
        BeatRecord beat;
        beat.beat_index = static_cast<std::int64_t>(k);
        beat.duration_s = duration;
        beat.x = Tensor(Shape{cfg.fixed_len, rec.channels()});
        for (std::size_t c = 0; c < rec.channels(); ++c) {
            const auto res = resample_linear(channels[c], static_cast<double>(s0), static_cast<double>(s1), cfg.fixed_len);
            for (std::size_t t = 0; t < cfg.fixed_len; ++t)
                beat.x.at(t, c) = cfg.invert && c == cfg.channel ? -res[t] : res[t];
        }
        if (!labels.empty()) {
            const auto it = labels.find(beat.beat_index);
            if (it == labels.end())
                throw IngestError("subject " + rec.subject_id + ": no label for beat " + std::to_string(k));
            beat.sbp = it->second.sbp;
            beat.dbp = it->second.dbp;
        }
        beats.push_back(std::move(beat));
    }
    return beats;
}

Landmarks find_landmarks(std::span<const double> x, double dt)
{
    const std::size_t n = x.size();
    if (n < 8)
        throw FeatureError("beat too short for landmark detection");
    const std::vector<double> d = smoothed_derivative(x, dt);

    std::size_t ia = n;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (d[i] > 0.0 && d[i + 1] <= 0.0) {
            ia = i;
            break;
        }
    if (ia == n)
        throw FeatureError("no descent zero-crossing (landmark A)");

    std::size_t ib = n;
    for (std::size_t i = ia + 1; i + 1 < n; ++i)
        if (d[i] < 0.0 && d[i + 1] >= 0.0) {
            ib = i;
            break;
        }
    if (ib == n)
        throw FeatureError("no ascent zero-crossing (landmark B)");

    std::size_t jf = ib + 1;
    for (std::size_t i = ib + 1; i < n; ++i)
        if (d[i] < d[jf])
            jf = i;
    if (jf + 1 >= n)
        throw FeatureError("derivative minimum after B is not interior (landmark F)");

    std::size_t jj = jf + 1;
    for (std::size_t i = jf + 1; i < n; ++i)
        if (d[i] > d[jj])
            jj = i;
    if (jj + 1 >= n || jj == jf + 1)
        throw FeatureError("derivative maximum after F is not interior (landmark J)");

    Landmarks lm;
    lm.t_a = (static_cast<double>(ia) + d[ia] / (d[ia] - d[ia + 1])) * dt;
    lm.t_b = (static_cast<double>(ib) + d[ib] / (d[ib] - d[ib + 1])) * dt;
    lm.t_f = parabolic_peak(d, jf) * dt;
    lm.t_j = parabolic_peak(d, jj) * dt;
    return lm;
}

Features extract_features(const BeatRecord& beat, std::size_t channel)
{
    if (beat.x.rank() != 2 || channel >= beat.x.dim(1))
        throw FeatureError("beat " + std::to_string(beat.beat_index) + " lacks channel " + std::to_string(channel));
    const std::vector<double> x = column(beat.x, channel);
    const Landmarks lm = find_landmarks(x, beat.sample_period());
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());

    Features u{};
    u[0] = *hi - *lo;
    u[1] = 1.0 / (lm.t_f - lm.t_b);
    u[2] = 60.0 / (lm.t_j - lm.t_a);
    if (!(u[2] > 20.0 && u[2] < 250.0))
        throw FeatureError("implausible u3 = " + std::to_string(u[2]) + " bpm");
    return u;
}

std::vector<BeatRecord> preprocess_recording(const RawRecording& rec, const SegmentConfig& cfg, Diagnostics* diag)
{
    std::vector<BeatRecord> beats = segment_beats(rec, cfg, diag);
    std::vector<BeatRecord> kept;
    kept.reserve(beats.size());
    for (BeatRecord& beat : beats) {
        try {
            beat.u = extract_features(beat, cfg.channel);
            kept.push_back(std::move(beat));
        } catch (const FeatureError& e) {
            warn(diag, "beat " + std::to_string(beat.beat_index) + " dropped: " + e.what());
        }
    }
    return kept;
}

DomainBounds compute_domain(std::span<const BeatRecord> train)
{
    if (train.empty())
        throw std::invalid_argument("compute_domain needs at least one training beat");
    const std::size_t channels = train.front().x.dim(1);
    DomainBounds b;
    b.lo.assign(channels, std::numeric_limits<double>::infinity());
    b.hi.assign(channels, -std::numeric_limits<double>::infinity());
    for (const BeatRecord& beat : train) {
        if (beat.x.rank() != 2 || beat.x.dim(1) != channels)
            throw DimensionError("compute_domain: beats disagree on channel count");
        for (std::size_t t = 0; t < beat.x.dim(0); ++t)
            for (std::size_t c = 0; c < channels; ++c) {
                b.lo[c] = std::min(b.lo[c], beat.x.at(t, c));
                b.hi[c] = std::max(b.hi[c], beat.x.at(t, c));
            }
    }
    return b;
}

SplitPlan minimal_split(std::span<const BeatRecord> beats, BpType type, double bin_width, std::uint64_t seed,
                        Diagnostics* diag)
{
    if (beats.empty())
        throw std::invalid_argument("minimal_split needs at least one beat");
    if (!(bin_width > 0.0))
        throw std::invalid_argument("bin width must be positive");

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const BeatRecord& b : beats) {
        lo = std::min(lo, b.label(type));
        hi = std::max(hi, b.label(type));
    }
    if (lo == hi)
        warn(diag, "all " + to_string(type) + " labels are identical; split has a single bin");

    std::map<long long, std::vector<std::size_t>> bins;
    for (std::size_t i = 0; i < beats.size(); ++i)
        bins[static_cast<long long>(std::floor((beats[i].label(type) - lo) / bin_width))].push_back(i);

    SplitPlan plan;
    plan.bin_width = bin_width;
    plan.bp_type = type;
    plan.seed = seed;
    std::mt19937_64 rng(seed);
    std::vector<bool> in_train(beats.size(), false);
    for (const auto& [bin, members] : bins) {
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        in_train[members[pick(rng)]] = true;
    }
    for (std::size_t i = 0; i < beats.size(); ++i)
        (in_train[i] ? plan.train : plan.test).push_back(i);
    return plan;
}

}  // namespace pitn
