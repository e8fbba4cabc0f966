#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pitn/signal.hpp"
#include "pitn/synth.hpp"
#include "pitn/train.hpp"

namespace pitn {

/// Every tunable of the command-line workflow. The defaults are the
/// published training configuration.
struct AppConfig {
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t n_subjects = 1;
    bool synth_affine = true;  // affine ground-truth map instead of the mild interaction map
    SynthConfig synth;
    SegmentConfig segment;
    double bin_width = 0.5;
    TrainConfig train;
    std::vector<BpType> bp_types{BpType::Sbp, BpType::Dbp};

    /// Throws ConfigError on invalid values.
    void validate() const;
};

/// Parses TOML text, then applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings). Unknown keys are ConfigErrors.
AppConfig parse_config(std::string_view toml_text, const std::vector<std::string>& overrides = {});
AppConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides = {});

/// Complete TOML rendering; parse_config(to_toml(c)) reproduces c.
std::string to_toml(const AppConfig& cfg);

}  // namespace pitn
