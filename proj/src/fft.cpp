#include "pitn/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace pitn {

std::size_t next_power_of_two(std::size_t n)
{
    std::size_t p = 1;
    while (p < n)
        p <<= 1;
    return p;
}

void fft_inplace(std::vector<std::complex<double>>& data)
{
    const std::size_t n = data.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft length " + std::to_string(n) + " is not a power of two");

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(data[i], data[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> step(std::cos(angle), std::sin(angle));
        for (std::size_t start = 0; start < n; start += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto even = data[start + k];
                const auto odd = data[start + k + len / 2] * w;
                data[start + k] = even + odd;
                data[start + k + len / 2] = even - odd;
                w *= step;
            }
        }
    }
}

Tensor rfft_amplitude(const Tensor& x)
{
    if (x.rank() != 2)
        throw DimensionError("rfft_amplitude expects a [T x d] matrix, got " + shape_string(x.shape()));
    const std::size_t T = x.dim(0), d = x.dim(1);
    if (T < 2)
        throw std::invalid_argument("rfft_amplitude needs at least 2 samples, got " + std::to_string(T));

    const std::size_t N = next_power_of_two(T);
    const std::size_t bins = T / 2 + 1;
    Tensor out(Shape{bins, d});
    std::vector<std::complex<double>> buf(N);
    for (std::size_t c = 0; c < d; ++c) {
        std::fill(buf.begin(), buf.end(), std::complex<double>{});
        for (std::size_t t = 0; t < T; ++t)
            buf[t] = x.at(t, c);
        fft_inplace(buf);
        for (std::size_t k = 0; k < bins; ++k) {
            const auto padded = static_cast<std::size_t>(
                std::llround(static_cast<double>(k) * static_cast<double>(N) / static_cast<double>(T)));
            out.at(k, c) = std::abs(buf[padded]);
        }
    }
    return out;
}

}  // namespace pitn
