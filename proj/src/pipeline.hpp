#pragma once

#include <string>

#include "config.hpp"

namespace udair {

// Command implementations behind the CLI and the C API. Every command writes
// an effective-config snapshot (config.json) into out_dir and is
// deterministic given config + seed.

void run_synth_data(const RunConfig& cfg, const std::string& out_dir);

void run_train(const RunConfig& cfg, const std::string& out_dir);

void run_eval(const RunConfig& cfg, Domain domain, bool tta, const std::string& out_dir);

void run_analyze_features(const RunConfig& cfg, const std::string& out_dir);

// Returns the count; group may be empty (total) or one of theta_r / theta_a /
// theta_da / restoration / awareness / adaptation. When out_dir is non-empty a
// params.json report is written there.
int64_t run_count_params(const RunConfig& cfg, const std::string& group,
                         const std::string& out_dir);

}  // namespace udair
