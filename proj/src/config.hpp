#pragma once

#include <string>

#include <json.hpp>

#include "checkpoint.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace udair {

// Layered run configuration: a named profile provides the full schema and
// defaults, a config file merges over it, and --set key=value overrides
// individual leaves. Keys that do not exist in the schema are rejected.
class RunConfig {
public:
  static RunConfig profile(const std::string& name);  // "ci" or "paper"
  static const std::vector<std::string>& profile_names();

  void merge_file(const std::string& path);
  void set(const std::string& dotted_key, const std::string& value);

  const nlohmann::json& root() const { return root_; }
  void write_snapshot(const std::string& path) const;

  uint64_t seed() const;
  std::string data_root() const;
  SynthConfig synth_config() const;
  ModelConfig model_config() const;
  TrainSettings train_settings() const;
  TtaConfig tta_config() const;
  SsimConfig ssim_config() const;
  int kl_bins() const;
  std::string eval_checkpoint() const;
  std::string init_checkpoint() const;
  bool compute_anchors() const;
  Variant variant() const;

private:
  nlohmann::json root_;
};

}  // namespace udair
