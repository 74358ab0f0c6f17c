#pragma once

#include <filesystem>
#include <string>

#include "ctt/trainer.hpp"

namespace ctt {

inline constexpr int kCheckpointVersion = 1;

/// Config as a JSON object; keys missing on read keep their defaults, unknown
/// keys are rejected.
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

/// Binary layout: magic "CTTCKPT\0", u32 version, config JSON, parameters,
/// Adam moments, generator state, data cursor. Doubles are stored bitwise.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& state);
/// Throws ParseError on malformed input, VersionMismatch on other versions.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ctt
