#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "pitn/model.hpp"
#include "pitn/signal.hpp"
#include "pitn/standardize.hpp"

namespace pitn {

struct Checkpoint {
    ModelState model;
    Standardizer standardizer;
    std::uint64_t seed = 0;
    BpType bp_type = BpType::Sbp;
    std::string subject_id;
};

/// Serialized form with a "content_hash" field: the git blob hash of the
/// canonical dump of every other field.
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
/// Throws io::InputError on schema violations or a content hash mismatch.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace pitn
