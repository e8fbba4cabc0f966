#pragma once

#include <span>
#include <vector>

#include "pitn/signal.hpp"
#include "pitn/tensor.hpp"

namespace pitn {

/// Affine scaling of waveforms (per channel), features (per feature) and
/// labels, fitted on training beats. A zero spread is treated as one.
struct Standardizer {
    std::vector<double> x_mean, x_std;
    std::vector<double> u_mean, u_std;
    double y_mean = 0.0;
    double y_std = 1.0;

    static Standardizer fit(std::span<const BeatRecord> train, BpType type);
    static Standardizer identity(std::size_t channels, std::size_t features);

    Tensor x(const Tensor& raw) const;
    Tensor u(const Features& raw) const;
    double y(double raw) const { return (raw - y_mean) / y_std; }
    double y_inverse(double scaled) const { return scaled * y_std + y_mean; }

    bool operator==(const Standardizer&) const = default;
};

}  // namespace pitn
