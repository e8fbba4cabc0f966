#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pitn/diagnostics.hpp"
#include "pitn/tensor.hpp"

namespace pitn {

enum class BpType { Sbp, Dbp };

std::string to_string(BpType type);
BpType parse_bp_type(const std::string& text);

/// Thrown when a beat lacks one of the derivative landmarks.
class FeatureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown for malformed input files or recordings; carries the line number
/// when one is known.
class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BeatLabel {
    std::int64_t beat_index = 0;
    double sbp = 0.0;
    double dbp = 0.0;
};

struct RawRecording {
    Tensor samples;  // [T_total x C]
    double sample_rate_hz = 0.0;
    std::string subject_id;
    std::vector<BeatLabel> labels;

    std::size_t length() const { return samples.rank() == 2 ? samples.dim(0) : 0; }
    std::size_t channels() const { return samples.rank() == 2 ? samples.dim(1) : 0; }
};

using Features = std::array<double, 3>;

struct BeatRecord {
    Tensor x;  // [T x C]
    Features u{};
    double sbp = 0.0;
    double dbp = 0.0;
    std::int64_t beat_index = 0;
    double duration_s = 0.0;
    std::string origin = "clean";

    double label(BpType type) const { return type == BpType::Sbp ? sbp : dbp; }
    /// Time step of the resampled beat in seconds.
    double sample_period() const;
};

struct DomainBounds {
    std::vector<double> lo;  // per channel
    std::vector<double> hi;
};

struct SplitPlan {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    double bin_width = 0.5;
    BpType bp_type = BpType::Sbp;
    std::uint64_t seed = 0;
};

struct SegmentConfig {
    std::size_t fixed_len = 128;
    std::size_t channel = 0;            // channel used for beat detection and features
    bool invert = false;                // flip the sign before detection
    double upstroke_fraction = 0.6;     // of the upstroke-slope percentile
    double upstroke_percentile = 98.0;
    double refractory_s = 0.24;
    double lead_fraction = 0.02;        // window starts this fraction of a beat before the peak
    double min_bpm = 20.0;
    double max_bpm = 250.0;
};

/// Five-point central-difference derivative (lower order at the edges)
/// followed by a centered moving average of width 5.
std::vector<double> smoothed_derivative(std::span<const double> x, double dt);

/// Linear interpolation of `x` at `n` equally spaced points over [first, last]
/// (fractional sample positions).
std::vector<double> resample_linear(std::span<const double> x, double first, double last, std::size_t n);

/// Sample positions of the systolic peaks found by the beat detector.
std::vector<std::size_t> detect_peaks(std::span<const double> x, double sample_rate_hz, const SegmentConfig& cfg,
                                      Diagnostics* diag = nullptr);

/// Splits a recording into beats resampled to cfg.fixed_len samples. Each
/// beat runs from just before one systolic peak to just before the next.
/// Features are left zero; labels are attached when the recording has them
/// (their count must equal the number of windows). Beats outside the heart
/// rate gate are dropped.
std::vector<BeatRecord> segment_beats(const RawRecording& rec, const SegmentConfig& cfg,
                                      Diagnostics* diag = nullptr);

/// Landmark times in seconds from the beat start.
struct Landmarks {
    double t_a = 0.0;  // derivative turns negative (waveform peak)
    double t_b = 0.0;  // derivative turns positive (waveform trough)
    double t_f = 0.0;  // derivative minimum after B
    double t_j = 0.0;  // derivative maximum after F
};

Landmarks find_landmarks(std::span<const double> x, double dt);

/// [u1, u2, u3]: amplitude span, 1/(t_F - t_B) in 1/s and 60/(t_J - t_A) in
/// bpm. Throws FeatureError when a landmark is missing or u3 is implausible.
Features extract_features(const BeatRecord& beat, std::size_t channel = 0);

/// Segments, extracts features and drops beats whose landmarks cannot be found.
std::vector<BeatRecord> preprocess_recording(const RawRecording& rec, const SegmentConfig& cfg,
                                             Diagnostics* diag = nullptr);

DomainBounds compute_domain(std::span<const BeatRecord> train);

/// One random beat per occupied label bin goes to training, the rest to test.
SplitPlan minimal_split(std::span<const BeatRecord> beats, BpType type, double bin_width, std::uint64_t seed,
                        Diagnostics* diag = nullptr);

}  // namespace pitn
