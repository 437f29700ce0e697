#include "train.hpp"

#include <cmath>
#include <iostream>

namespace udair {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::vector<size_t> sizes_of(const std::vector<std::vector<SamplePair>>& per_task) {
  std::vector<size_t> s;
  for (const auto& t : per_task) s.push_back(t.size());
  return s;
}

std::vector<ag::Var> trainable_params(Model& m) {
  // theta_da stays untouched during source training
  auto vars = m.params().vars(ParamGroup::Restoration);
  for (auto& v : m.params().vars(ParamGroup::Awareness)) vars.push_back(v);
  return vars;
}

}  // namespace

ag::Var mae_loss(const ag::Var& pred, const ag::Var& target) {
  if (!pred->value.same_shape(target->value))
    throw ConfigError("mae shape mismatch: " + pred->value.shape_str() + " vs " +
                      target->value.shape_str());
  return ag::mean_all(ag::abs_v(ag::sub(pred, target)));
}

ag::Var total_loss(const ag::Var& pred, const ag::Var& target, const ag::Var& f_g,
                   const ag::Var& f_s, const ag::Var& z_e, const ag::Var& z_q,
                   const TrainSettings& cfg, LossBreakdown* breakdown) {
  LossBreakdown bd;
  auto mae = mae_loss(pred, target);
  bd.mae = mae->value[0];
  auto loss = ag::scale(mae, cfg.alpha);
  if (f_g && f_s) {
    auto c = cscl_loss(f_g, f_s, cfg.cscl);
    bd.cscl = c->value[0];
    loss = ag::add(loss, ag::scale(c, cfg.beta));
  }
  if (z_e && z_q) {
    auto [cb, commit] = Daam::codebook_losses(z_e, z_q);
    bd.codebook = cb->value[0];
    bd.commitment = commit->value[0];
    loss = ag::add(loss, ag::add(ag::scale(cb, cfg.vq_codebook_weight),
                                 ag::scale(commit, cfg.vq_commitment_weight)));
  }
  bd.total = loss->value[0];
  if (breakdown) *breakdown = bd;
  return loss;
}

double cosine_lr(int step, int total_steps, double lr0, double floor) {
  if (total_steps <= 0) return lr0;
  double t = std::min(std::max(double(step) / double(total_steps), 0.0), 1.0);
  return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(kPi * t));
}

Trainer::Trainer(Model& model, TrainSettings settings,
                 std::vector<std::vector<SamplePair>> per_task_train)
    : model_(model),
      settings_(std::move(settings)),
      per_task_(std::move(per_task_train)),
      stream_(sizes_of(per_task_),
              BatchPlan{int(per_task_.size()), settings_.samples_per_task}, settings_.seed),
      opt_(trainable_params(model), settings_.lr, settings_.adam_beta1, settings_.adam_beta2,
           1e-8, settings_.weight_decay),
      rng_(mix_seed(settings_.seed, "trainer")),
      code_usage_(size_t(model.config().daam.codebook_size), 0) {
  if (settings_.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (settings_.alpha < 0.0 || settings_.beta < 0.0)
    throw ConfigError("loss weights must be non-negative");
  if (settings_.schedule != "cosine" && settings_.schedule != "constant")
    throw ConfigError("unknown lr schedule: " + settings_.schedule);
  for (const auto& t : per_task_)
    for (const auto& p : t)
      if (p.degraded.height() < settings_.crop || p.degraded.width() < settings_.crop)
        throw DataError("training image smaller than crop size");
}

void Trainer::maybe_reseed_dead_codes(const Tensor& latent_rows) {
  ++batches_into_epoch_;
  if (batches_into_epoch_ < stream_.batches_per_epoch()) return;
  batches_into_epoch_ = 0;
  int reseeded = 0;
  auto codebook = model_.daam().codebook();
  int k = codebook->value.dim(0), d = codebook->value.dim(1);
  for (int i = 0; i < k; ++i) {
    if (code_usage_[size_t(i)] > 0) continue;
    int row = int(rng_.below(latent_rows.dim(0)));
    for (int c = 0; c < d; ++c)
      codebook->value.at2(i, c) =
          latent_rows.at2(row, c) + 0.01 * rng_.normal();
    ++reseeded;
  }
  if (reseeded > 0)
    std::cerr << "[train] reseeded " << reseeded << " unused codebook entries\n";
  std::fill(code_usage_.begin(), code_usage_.end(), 0);
}

StepMetrics Trainer::step() {
  auto picks = stream_.next();
  int b = int(picks.size());
  int crop = settings_.crop;
  Tensor degraded({b, 3, crop, crop});
  Tensor clean({b, 3, crop, crop});
  for (int i = 0; i < b; ++i) {
    const auto& [task, idx] = picks[size_t(i)];
    const SamplePair& pair = per_task_[size_t(task)][size_t(idx)];
    SamplePair view;
    if (settings_.augment) {
      Rng aug(mix_seed(settings_.seed, "augment", uint64_t(step_), uint64_t(i)));
      view = augment(pair, crop, aug);
    } else if (pair.degraded.height() == crop && pair.degraded.width() == crop) {
      view = pair;
    } else {
      view = apply_augment(pair, crop, AugmentParams{});
    }
    int64_t plane = int64_t(3) * crop * crop;
    std::copy(view.degraded.tensor().data(), view.degraded.tensor().data() + plane,
              degraded.data() + int64_t(i) * plane);
    std::copy(view.clean.tensor().data(), view.clean.tensor().data() + plane,
              clean.data() + int64_t(i) * plane);
  }

  auto x = ag::constant(std::move(degraded));
  auto y = ag::constant(std::move(clean));
  auto [pred, feature] = model_.forward_restore(x, settings_.variant);

  ag::Var f_g, f_s;
  if (variant_uses_cscl(settings_.variant)) {
    BatchPlan plan{int(per_task_.size()), settings_.samples_per_task};
    auto grouped = group_by_task(feature.flat, plan);
    Rng shuffle_rng(mix_seed(settings_.seed, "cscl-shuffle", uint64_t(step_)));
    auto shuffled = shuffle_within_task(grouped, shuffle_rng);
    f_g = aggregate(grouped);
    f_s = aggregate(shuffled);
  }
  ag::Var z_e = variant_uses_codebook(settings_.variant) ? feature.z_e : nullptr;
  ag::Var z_q = variant_uses_codebook(settings_.variant) ? feature.z_q : nullptr;

  StepMetrics m;
  m.step = step_;
  auto loss = total_loss(pred, y, f_g, f_s, z_e, z_q, settings_, &m.loss);
  if (!std::isfinite(m.loss.total))
    throw NumericError("training diverged at step " + std::to_string(step_) +
                       ": total=" + std::to_string(m.loss.total) +
                       " mae=" + std::to_string(m.loss.mae) +
                       " cscl=" + std::to_string(m.loss.cscl) +
                       " codebook=" + std::to_string(m.loss.codebook) +
                       " commitment=" + std::to_string(m.loss.commitment));

  double lr = settings_.schedule == "cosine"
                  ? cosine_lr(int(step_), settings_.steps, settings_.lr, settings_.lr_floor)
                  : settings_.lr;
  m.lr = lr;
  opt_.zero_grad();
  ag::backward(loss);
  opt_.set_lr(lr);
  opt_.step();

  if (variant_uses_codebook(settings_.variant)) {
    for (int idx : feature.indices) ++code_usage_[size_t(idx)];
    if (settings_.dead_code_reseed && feature.z_e) {
      const auto& s = feature.z_e->value.shape();
      Tensor latent_rows({s[0] * s[2] * s[3], s[1]});
      for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
          for (int h = 0; h < s[2]; ++h)
            for (int w = 0; w < s[3]; ++w)
              latent_rows.at2((n * s[2] + h) * s[3] + w, c) = feature.z_e->value.at4(n, c, h, w);
      maybe_reseed_dead_codes(latent_rows);
    }
  }

  ++step_;
  return m;
}

void Trainer::run(const std::function<void(const StepMetrics&)>& sink,
                  const std::function<bool(const StepMetrics&)>& stop_early) {
  for (int i = 0; i < settings_.steps; ++i) {
    StepMetrics m = step();
    if (sink) sink(m);
    if (stop_early && stop_early(m)) break;
  }
}

}  // namespace udair
