#pragma once

#include <cstddef>
#include <functional>

namespace pitn {

/// Runs fn(0) .. fn(n - 1) on up to `workers` threads. Every task runs even
/// if another fails; afterwards the exception of the lowest failing index is
/// rethrown.
void parallel_for(std::size_t workers, std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pitn
