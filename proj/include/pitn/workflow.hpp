#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "pitn/config.hpp"
#include "pitn/metrics.hpp"

namespace pitn::workflow {

namespace fs = std::filesystem;

/// Writes `<id>.signal.csv` and `<id>.labels.csv` per synthetic subject.
void run_synth(const AppConfig& cfg, const fs::path& out, std::ostream& log);

/// Segments recordings into beats. `in` is a synth output or any directory
/// holding `<id>.signal.csv` / `<id>.labels.csv` pairs.
void run_preprocess(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log);

/// Minimal-training-criterion split per subject and BP type.
void run_split(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log);

/// One model per (subject, BP type), trained on a worker pool.
void run_train(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log);

/// Emits clean training beats plus their augmented counterparts as a beats
/// directory, using the first configured BP type's model of each subject.
void run_augment(const AppConfig& cfg, const fs::path& in, const fs::path& models, const fs::path& out,
                 std::ostream& log);

/// Test-set metrics and predictions per (subject, BP type).
void run_eval(const AppConfig& cfg, const fs::path& in, const fs::path& models, const fs::path& out,
              std::ostream& log);

/// Aggregate table over an eval directory: one row per subject, SBP and DBP
/// column groups, plus a mean row.
void run_report(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log);

/// Trains and evaluates every subject once per value of `param`.
void run_sweep(const AppConfig& cfg, const fs::path& in, const std::string& param, const std::vector<double>& values,
               const fs::path& out, std::ostream& log);

/// Config keys accepted by `sweep --param`.
std::string sweep_key(const std::string& param);

}  // namespace pitn::workflow
