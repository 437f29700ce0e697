#include "model.hpp"

#include <cmath>

namespace udair {

Variant variant_from_name(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "no_cscl") return Variant::NoCscl;
  if (s == "no_codebook") return Variant::NoCodebook;
  if (s == "baseline") return Variant::Baseline;
  throw ConfigError("unknown variant: " + s);
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoCscl: return "no_cscl";
    case Variant::NoCodebook: return "no_codebook";
    case Variant::Baseline: return "baseline";
  }
  return "?";
}

void ModelConfig::validate() const {
  backbone.validate();
  if (backbone.inject_dim != daam.dim)
    throw ConfigError("backbone inject_dim must equal daam dim");
  if (dam.dim != daam.dim) throw ConfigError("dam dim must equal daam dim");
  if (backbone.downsample_factor() != 8)
    throw ConfigError("bottleneck must sit at 8x spatial reduction");
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg.init_seed, "model-init"));
  backbone_ = std::make_unique<Backbone>(store_, cfg_.backbone, rng);
  daam_ = std::make_unique<Daam>(store_, cfg_.daam, rng);
  dam_ = std::make_unique<Dam>(store_, cfg_.dam, rng);
  snapshot_dam_template();
}

void Model::snapshot_dam_template() {
  dam_template_.clear();
  for (const auto& v : store_.vars(ParamGroup::Adaptation))
    dam_template_.push_back(v->value);
}

void Model::reset_dam() {
  auto vars = store_.vars(ParamGroup::Adaptation);
  if (vars.size() != dam_template_.size())
    throw ConfigError("dam template out of sync");
  for (size_t i = 0; i < vars.size(); ++i) {
    vars[i]->value = dam_template_[i];
    vars[i]->grad = Tensor();
  }
}

ag::Var Model::image_batch(const std::vector<const Image*>& imgs) {
  if (imgs.empty()) throw DataError("empty image batch");
  int h = imgs[0]->height(), w = imgs[0]->width();
  Tensor batch({int(imgs.size()), 3, h, w});
  for (size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i]->height() != h || imgs[i]->width() != w)
      throw DataError("batch images must share a shape");
    std::copy(imgs[i]->tensor().data(), imgs[i]->tensor().data() + imgs[i]->tensor().numel(),
              batch.data() + int64_t(i) * 3 * h * w);
  }
  return ag::constant(std::move(batch));
}

ag::Var Model::image_batch(const Image& img) { return image_batch({&img}); }

DegradationFeature Model::degradation_features(const ag::Var& x, Variant v, bool apply_dam) {
  if (v == Variant::Baseline)
    throw ConfigError("baseline variant has no degradation features");
  DegradationFeature f = daam_->features(x, variant_uses_codebook(v));
  if (apply_dam) {
    ++dam_invocations_;
    f.map = dam_->forward(f.map);
    const auto& s = f.map->value.shape();
    f.flat = ag::reshape(f.map, {s[0], s[1] * s[2] * s[3]});
    f.pooled = ag::mean(f.map, {2, 3}, false);
  }
  return f;
}

std::pair<ag::Var, DegradationFeature> Model::forward_restore(const ag::Var& x, Variant v,
                                                              bool apply_dam) {
  auto enc = backbone_->encode(x);
  if (v == Variant::Baseline) {
    const auto& bs = enc.bottleneck->value.shape();
    DegradationFeature f;
    f.map = ag::constant(Tensor({bs[0], cfg_.daam.dim, bs[2], bs[3]}));
    f.flat = ag::reshape(f.map, {bs[0], cfg_.daam.dim * bs[2] * bs[3]});
    f.pooled = ag::mean(f.map, {2, 3}, false);
    return {backbone_->decode(enc, f.map), std::move(f)};
  }
  DegradationFeature f = degradation_features(x, v, apply_dam);
  auto restored = backbone_->decode(enc, f.map);
  return {restored, std::move(f)};
}

Image Model::restore(const Image& img, Variant v) {
  ag::NoGradGuard ng;
  auto [restored, f] = forward_restore(image_batch(img), v);
  (void)f;
  Tensor t = restored->value.reshaped({3, img.height(), img.width()});
  return Image(std::move(t));
}

DegradationFeature Model::degradation_features(const Image& img, Variant v, bool apply_dam) {
  ag::NoGradGuard ng;
  return degradation_features(image_batch(img), v, apply_dam);
}

AnchorSet Model::compute_anchors(const std::vector<std::vector<SamplePair>>& per_task,
                                 Variant v) {
  ag::NoGradGuard ng;
  AnchorSet set;
  int d = cfg_.daam.dim;
  for (size_t t = 0; t < per_task.size(); ++t) {
    // mean over every spatial row of the task; covariance as the average of
    // per-sample spatial covariances, so test-time alignment compares a
    // single image against typical per-image statistics
    Tensor mean({d});
    Tensor cov({d, d});
    int64_t rows_total = 0;
    int64_t samples = 0;
    for (const auto& sample : per_task[t]) {
      auto f = degradation_features(image_batch(sample.degraded), v, false);
      const auto& s = f.map->value.shape();
      const Tensor& m = f.map->value;
      int h = s[2], w = s[3];
      if (int64_t(h) * w < 2)
        throw DataError(std::string("task ") + task_name(Task(int(t))) +
                        " sample yields fewer than 2 feature rows");
      Tensor rows({h * w, d});
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
          for (int c = 0; c < d; ++c) rows.at2(ih * w + iw, c) = m.at4(0, c, ih, iw);
      Tensor c_i = covariance(rows);
      for (int64_t i = 0; i < cov.numel(); ++i) cov[i] += c_i[i];
      for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < d; ++c) mean[c] += rows.at2(i, c);
      rows_total += int64_t(h) * w;
      ++samples;
    }
    if (rows_total < 2 || samples < 1)
      throw DataError(std::string("task ") + task_name(Task(int(t))) +
                      " yields fewer than 2 feature rows");
    for (int c = 0; c < d; ++c) mean[c] /= double(rows_total);
    for (int64_t i = 0; i < cov.numel(); ++i) cov[i] /= double(samples);
    AnchorSet::Anchor a;
    a.count = rows_total;
    a.mean = std::move(mean);
    a.cov = std::move(cov);
    set.anchors.push_back(std::move(a));
  }
  return set;
}

TtaReport Model::tta_adapt(const Image& img, const AnchorSet& anchors, const TtaConfig& cfg,
                           Variant v) {
  if (anchors.empty()) throw ConfigError("tta requires anchors");
  if (cfg.steps < 0) throw ConfigError("tta steps must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("tta learning rate must be positive");
  if (cfg.reset_per_sample) reset_dam();

  // theta_a is frozen during adaptation, so the pre-DAM features are a
  // constant across steps.
  Tensor fd_value;
  {
    ag::NoGradGuard ng;
    auto f = daam_->features(image_batch(img), variant_uses_codebook(v));
    fd_value = f.map->value;
  }
  const auto& s = fd_value.shape();
  if (int64_t(s[2]) * s[3] < 2)
    throw DataError("tta needs at least 2 spatial feature rows");
  auto theta_da = store_.vars(ParamGroup::Adaptation);

  TtaReport report;
  auto eval_coral = [&](bool with_grad, ag::Var* loss_out) {
    std::unique_ptr<ag::NoGradGuard> ng;
    if (!with_grad) ng = std::make_unique<ag::NoGradGuard>();
    ++dam_invocations_;
    auto out = dam_->forward(ag::constant(fd_value));
    if (report.selected_task < 0) {
      Tensor pooled({s[1]});
      const Tensor& m = out->value;
      for (int c = 0; c < s[1]; ++c) {
        double acc = 0.0;
        for (int ih = 0; ih < s[2]; ++ih)
          for (int iw = 0; iw < s[3]; ++iw) acc += m.at4(0, c, ih, iw);
        pooled[c] = acc / double(s[2] * s[3]);
      }
      report.selected_task = select_anchor(pooled, anchors);
    }
    const Tensor& anchor_cov = anchors.anchors[size_t(report.selected_task)].cov;
    auto rows = ag::nchw_to_rows(out);
    auto loss = coral_loss_var(covariance_var(rows), anchor_cov);
    if (loss_out) *loss_out = loss;
    return loss->value[0];
  };

  auto snapshot = [&] {
    std::vector<Tensor> vals;
    vals.reserve(theta_da.size());
    for (const auto& p : theta_da) vals.push_back(p->value);
    return vals;
  };
  auto restore = [&](const std::vector<Tensor>& vals) {
    for (size_t i = 0; i < theta_da.size(); ++i) theta_da[i]->value = vals[i];
  };

  double eta = cfg.lr;
  for (int step = 0; step < cfg.steps; ++step) {
    ag::Var loss;
    double current = eval_coral(/*with_grad=*/true, &loss);
    report.coral_per_step.push_back(current);
    for (auto& p : theta_da) p->zero_grad();
    ag::backward(loss);
    auto saved = snapshot();
    bool accepted = false;
    for (int attempt = 0; attempt <= cfg.max_backtracks; ++attempt) {
      ag::sgd_step(theta_da, eta);
      double trial = eval_coral(false, nullptr);
      if (std::isfinite(trial) && trial <= current) {
        accepted = true;
        break;
      }
      restore(saved);
      eta *= 0.5;
    }
    if (!accepted) break;  // gradient too steep at any usable step size
  }
  // trailing entries: value after the last applied update, padded if the
  // line search stopped early so length stays steps+1
  while (int(report.coral_per_step.size()) <= cfg.steps)
    report.coral_per_step.push_back(eval_coral(false, nullptr));
  return report;
}

Image Model::restore_with_tta(const Image& img, const AnchorSet& anchors,
                              const TtaConfig& cfg, Variant v, TtaReport* report) {
  TtaReport r = tta_adapt(img, anchors, cfg, v);
  if (report) *report = r;
  ag::NoGradGuard ng;
  auto [restored, f] = forward_restore(image_batch(img), v, /*apply_dam=*/true);
  (void)f;
  Tensor t = restored->value.reshaped({3, img.height(), img.width()});
  return Image(std::move(t));
}

}  // namespace udair
