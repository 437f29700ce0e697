#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adaptation.hpp"
#include "backbone.hpp"
#include "daam.hpp"
#include "dataset.hpp"

namespace udair {

enum class Variant { Full, NoCscl, NoCodebook, Baseline };
Variant variant_from_name(const std::string& s);
const char* variant_name(Variant v);
inline bool variant_uses_codebook(Variant v) {
  return v == Variant::Full || v == Variant::NoCscl;
}
inline bool variant_uses_cscl(Variant v) { return v == Variant::Full; }

struct ModelConfig {
  BackboneConfig backbone;
  DaamConfig daam;
  DamConfig dam;
  uint64_t init_seed = 0;

  void validate() const;
};

// The complete restoration model: backbone (theta_r), DAAM with codebook
// (theta_a), and the DAM adapter (theta_da, touched only at test time).
class Model {
public:
  explicit Model(const ModelConfig& cfg);

  // x: (N,3,H,W) degraded batch. apply_dam routes the degradation features
  // through the DAM before packaging/injection (target-domain inference only).
  DegradationFeature degradation_features(const ag::Var& x, Variant v,
                                          bool apply_dam = false);
  std::pair<ag::Var, DegradationFeature> forward_restore(const ag::Var& x, Variant v,
                                                         bool apply_dam = false);

  // Single-image convenience wrappers (no tape).
  Image restore(const Image& img, Variant v);
  DegradationFeature degradation_features(const Image& img, Variant v,
                                          bool apply_dam = false);

  // Per-task source statistics of the (post-quantize, post-gate) spatial
  // feature vectors.
  AnchorSet compute_anchors(const std::vector<std::vector<SamplePair>>& per_task,
                            Variant v);

  // Optimizes theta_da only; theta_a and theta_r are untouched. The anchor is
  // selected once at step 0 and frozen.
  TtaReport tta_adapt(const Image& img, const AnchorSet& anchors, const TtaConfig& cfg,
                      Variant v = Variant::Full);
  Image restore_with_tta(const Image& img, const AnchorSet& anchors, const TtaConfig& cfg,
                         Variant v = Variant::Full, TtaReport* report = nullptr);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  Daam& daam() { return *daam_; }
  Backbone& backbone() { return *backbone_; }
  Dam& dam() { return *dam_; }

  // theta_da handling for per-sample resets
  void reset_dam();
  void snapshot_dam_template();

  int64_t dam_invocations() const { return dam_invocations_; }
  std::string digest(const std::vector<ParamGroup>& groups) const {
    return store_.digest(groups);
  }

  static ag::Var image_batch(const std::vector<const Image*>& imgs);
  static ag::Var image_batch(const Image& img);

private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Daam> daam_;
  std::unique_ptr<Dam> dam_;
  std::vector<Tensor> dam_template_;
  int64_t dam_invocations_ = 0;
};

}  // namespace udair
