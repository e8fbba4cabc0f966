#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pitn/signal.hpp"

namespace pitn::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Missing or malformed input files and directories.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure to write an output artifact.
class OutputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads `t_sec,ch0[,ch1,...]` samples and `beat_index,sbp_mmhg,dbp_mmhg`
/// labels. The sample rate comes from the time column, which must be
/// uniformly spaced. Malformed rows raise IngestError naming file and line.
RawRecording read_recording_csv(const fs::path& signal, const fs::path& labels, std::string subject_id = {});
void write_recording_csv(const RawRecording& rec, const fs::path& signal, const fs::path& labels);

json beat_to_json(const BeatRecord& beat);
BeatRecord beat_from_json(const json& j);
void write_beats(const fs::path& file, std::span<const BeatRecord> beats);
std::vector<BeatRecord> read_beats(const fs::path& file);

json split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(const json& j);

std::string read_text(const fs::path& file);
void write_text(const fs::path& file, std::string_view text);
json read_json(const fs::path& file);
void write_json(const fs::path& file, const json& j);

std::string sha1_hex(std::string_view data);
/// SHA-1 of "blob <size>\0<data>", as git computes object ids.
std::string git_blob_hash(std::string_view data);

/// Manifest skeleton for an artifact directory.
json make_manifest(const std::string& kind, std::uint64_t seed, const std::string& config_toml);
/// Writes dir/manifest.json, adding a creation timestamp and the list of
/// other files in the directory.
void write_manifest(const fs::path& dir, json manifest);
/// Reads dir/manifest.json, checking its kind when `kind` is non-empty.
json read_manifest(const fs::path& dir, const std::string& kind = {});

/// Hash over every file's relative path and content. Manifest timestamps
/// are excluded so that reruns with identical inputs hash identically.
std::string directory_hash(const fs::path& dir);

/// Creates `dir` if needed; fails if it exists and is not a directory.
void ensure_directory(const fs::path& dir);

}  // namespace pitn::io
