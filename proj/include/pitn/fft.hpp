#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "pitn/tensor.hpp"

namespace pitn {

std::size_t next_power_of_two(std::size_t n);

/// In-place iterative radix-2 FFT. The length must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

/// Per-column magnitude spectrum of a real [T x d] signal, shape [T/2+1 x d].
///
/// Each column is zero-padded to the next power of two N before the
/// transform; bin k of the result reads padded bin round(k * N / T), i.e. the
/// nearest frequency on the unpadded grid. Throws std::invalid_argument for
/// T < 2.
Tensor rfft_amplitude(const Tensor& x);

}  // namespace pitn
