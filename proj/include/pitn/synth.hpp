#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pitn/signal.hpp"

namespace pitn {

/// Beat shape as fractions of the beat period. Each beat is a systolic
/// asymmetric Gaussian bump plus a smaller, delayed reflection bump.
struct Morphology {
    double systolic_left = 0.06;
    double systolic_right = 0.10;
    double reflection_delay = 0.32;
    double reflection_left = 0.07;
    double reflection_right = 0.06;
    double reflection_ratio = 0.45;
};

/// Slow sinusoidal modulation across beats. `rate` is in cycles per beat;
/// the three depths are relative. Amplitude, period and reflection delay
/// drift at rate, 0.77 * rate and 1.29 * rate with seeded phases.
struct DriftConfig {
    double rate = 0.01;
    double amplitude_depth = 0.25;
    double period_depth = 0.12;
    double delay_depth = 0.15;
};

/// bp = c0 + c1*u1 + c2*u2 + c3*u3 + interaction*u1*u3.
struct BpMap {
    std::array<double, 4> sbp{60.0, 25.0, 1.2, 0.45};
    std::array<double, 4> dbp{40.0, 12.0, 0.6, 0.25};
    double sbp_interaction = 0.02;
    double dbp_interaction = 0.01;

    double sbp_of(const Features& u) const;
    double dbp_of(const Features& u) const;
    static BpMap affine();
};

struct SynthConfig {
    std::size_t n_beats = 500;
    double sample_rate_hz = 250.0;
    double base_period_s = 0.8;
    double amplitude = 1.0;
    double baseline = 0.0;
    Morphology morphology;
    DriftConfig drift;
    BpMap bp_map;
    double noise_std = 0.005;
    std::uint64_t seed = 0;
    std::string subject_id = "synth";
};

struct SynthOutput {
    RawRecording recording;
    /// Noise-free beats with analytic features, labels and landmarks.
    std::vector<BeatRecord> truth;
    std::vector<Landmarks> landmarks;
};

/// Renders the recording and the analytic ground truth. Throws ConfigError
/// for invalid parameters, when a beat's landmarks come out of order, or when
/// the BP map yields SBP <= DBP.
SynthOutput generate(const SynthConfig& cfg, const SegmentConfig& seg = {});

}  // namespace pitn
