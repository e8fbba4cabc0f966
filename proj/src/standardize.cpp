#include "pitn/standardize.hpp"

#include <cmath>
#include <stdexcept>

namespace pitn {

namespace {

double spread_or_one(double sum_sq, double n)
{
    const double s = std::sqrt(sum_sq / n);
    return s > 0.0 ? s : 1.0;
}

}  // namespace

Standardizer Standardizer::fit(std::span<const BeatRecord> train, BpType type)
{
    if (train.empty())
        throw std::invalid_argument("cannot fit a standardizer on zero beats");
    const std::size_t C = train.front().x.dim(1);
    const std::size_t M = train.front().u.size();
    Standardizer s;
    s.x_mean.assign(C, 0.0);
    s.x_std.assign(C, 0.0);
    s.u_mean.assign(M, 0.0);
    s.u_std.assign(M, 0.0);

    double count = 0.0;
    for (const BeatRecord& b : train) {
        if (b.x.dim(1) != C)
            throw DimensionError("standardizer: beats disagree on channel count");
        for (std::size_t t = 0; t < b.x.dim(0); ++t)
            for (std::size_t c = 0; c < C; ++c)
                s.x_mean[c] += b.x.at(t, c);
        count += static_cast<double>(b.x.dim(0));
        for (std::size_t j = 0; j < M; ++j)
            s.u_mean[j] += b.u[j];
        s.y_mean += b.label(type);
    }
    const auto n = static_cast<double>(train.size());
    for (double& m : s.x_mean)
        m /= count;
    for (double& m : s.u_mean)
        m /= n;
    s.y_mean /= n;

    double y_sq = 0.0;
    for (const BeatRecord& b : train) {
        for (std::size_t t = 0; t < b.x.dim(0); ++t)
            for (std::size_t c = 0; c < C; ++c)
                s.x_std[c] += std::pow(b.x.at(t, c) - s.x_mean[c], 2);
        for (std::size_t j = 0; j < M; ++j)
            s.u_std[j] += std::pow(b.u[j] - s.u_mean[j], 2);
        y_sq += std::pow(b.label(type) - s.y_mean, 2);
    }
    for (double& v : s.x_std)
        v = spread_or_one(v, count);
    for (double& v : s.u_std)
        v = spread_or_one(v, n);
    s.y_std = spread_or_one(y_sq, n);
    return s;
}

Standardizer Standardizer::identity(std::size_t channels, std::size_t features)
{
    Standardizer s;
    s.x_mean.assign(channels, 0.0);
    s.x_std.assign(channels, 1.0);
    s.u_mean.assign(features, 0.0);
    s.u_std.assign(features, 1.0);
    return s;
}

Tensor Standardizer::x(const Tensor& raw) const
{
    if (raw.rank() != 2 || raw.dim(1) != x_mean.size())
        throw DimensionError("standardizer: waveform shape " + shape_string(raw.shape()) + " does not match " +
                             std::to_string(x_mean.size()) + " channels");
    Tensor out = raw;
    for (std::size_t t = 0; t < raw.dim(0); ++t)
        for (std::size_t c = 0; c < x_mean.size(); ++c)
            out.at(t, c) = (raw.at(t, c) - x_mean[c]) / x_std[c];
    return out;
}

Tensor Standardizer::u(const Features& raw) const
{
    if (raw.size() != u_mean.size())
        throw DimensionError("standardizer: feature count mismatch");
    Tensor out(Shape{raw.size()});
    for (std::size_t j = 0; j < raw.size(); ++j)
        out[j] = (raw[j] - u_mean[j]) / u_std[j];
    return out;
}

}  // namespace pitn
