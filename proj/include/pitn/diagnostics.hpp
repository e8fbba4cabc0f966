#pragma once

#include <string>
#include <vector>

namespace pitn {

/// Collects non-fatal warnings from pipeline stages. Not thread-safe; use
/// one instance per job.
struct Diagnostics {
    std::vector<std::string> warnings;

    void warn(std::string message) { warnings.push_back(std::move(message)); }
    bool empty() const { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message)
{
    if (diag)
        diag->warn(std::move(message));
}

}  // namespace pitn
