#pragma once

#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "model.hpp"

namespace udair {

// Model config <-> json (the checkpoint metadata schema).
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Single-file container: magic, version, json metadata, little-endian f64
// payload, and a SHA-256 trailer over both. Round trips are bit-exact.
void save_checkpoint(const std::string& path, const Model& model,
                     const nlohmann::json& run_config, uint64_t rng_state, int64_t step,
                     const AnchorSet* anchors);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json run_config;
  uint64_t rng_state = 0;
  int64_t step = 0;
  std::optional<AnchorSet> anchors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace udair
