#include "daam.hpp"

#include <cmath>

namespace udair {

int nearest_code(const double* z, int dim, const Tensor& codebook) {
  int k = codebook.dim(0);
  int best = 0;
  double best_d2 = 0.0;
  for (int j = 0; j < dim; ++j) {
    double d = z[j] - codebook.at2(0, j);
    best_d2 += d * d;
  }
  for (int i = 1; i < k; ++i) {
    double d2 = 0.0;
    for (int j = 0; j < dim; ++j) {
      double d = z[j] - codebook.at2(i, j);
      d2 += d * d;
      if (d2 > best_d2) break;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

std::vector<int> nearest_codes(const Tensor& rows, const Tensor& codebook) {
  if (rows.rank() != 2 || rows.dim(1) != codebook.dim(1))
    throw ConfigError("latent/codebook dimension mismatch: " + rows.shape_str() + " vs " +
                      codebook.shape_str());
  if (!rows.all_finite()) throw NumericError("non-finite latent passed to quantizer");
  int n = rows.dim(0), d = rows.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out[size_t(i)] = nearest_code(rows.data() + int64_t(i) * d, d, codebook);
  return out;
}

std::vector<int64_t> code_usage_histogram(const std::vector<int>& indices, int k) {
  std::vector<int64_t> hist(size_t(k), 0);
  for (int i : indices) {
    if (i >= 0 && i < k) ++hist[size_t(i)];
  }
  return hist;
}

Daam::Daam(ParamStore& store, const DaamConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.dim < 4 || cfg.dim % 4 != 0)
    throw ConfigError("daam dim must be a positive multiple of 4");
  if (cfg.codebook_size < 2) throw ConfigError("codebook needs at least 2 codes");
  if (cfg.gate_eps <= 0.0) throw ConfigError("gate epsilon must be positive");
  int d = cfg.dim;
  down1_ = Conv2d(store, ParamGroup::Awareness, "daam.down1", 3, d / 4, 3, 2, 1, rng);
  down2_ = Conv2d(store, ParamGroup::Awareness, "daam.down2", d / 4, d / 2, 3, 2, 1, rng);
  down3_ = Conv2d(store, ParamGroup::Awareness, "daam.down3", d / 2, d, 3, 2, 1, rng);
  codebook_ = store.add(ParamGroup::Awareness, "daam.codebook",
                        Tensor::randn({cfg.codebook_size, d}, rng, 1.0 / std::sqrt(double(d))));
  // gate starts as the identity: tanh(0) = 0
  lambda_ = store.add(ParamGroup::Awareness, "daam.gate.lambda", Tensor::scalar(1.0));
  gamma_ = store.add(ParamGroup::Awareness, "daam.gate.gamma", Tensor({d}));
  beta_ = store.add(ParamGroup::Awareness, "daam.gate.beta", Tensor({d}));
}

ag::Var Daam::extract(const ag::Var& image) const {
  const auto& s = image->value.shape();
  if (image->value.rank() != 4 || s[1] != 3)
    throw ConfigError("daam extract expects (N,3,H,W)");
  if (s[2] % 8 != 0 || s[3] % 8 != 0)
    throw ConfigError("image dims must be divisible by 8, got " + image->value.shape_str());
  auto x = ag::gelu(down1_.forward(image));
  x = ag::gelu(down2_.forward(x));
  return down3_.forward(x);
}

Daam::Quantized Daam::quantize(const ag::Var& latent) const {
  const auto& s = latent->value.shape();
  if (latent->value.rank() != 4 || s[1] != cfg_.dim)
    throw ConfigError("quantize expects (N,D,h,w) latent");
  int n = s[0], h = s[2], w = s[3];
  auto rows = ag::nchw_to_rows(latent);  // (N*h*w, D)
  Quantized q;
  q.indices = nearest_codes(rows->value, codebook_->value);
  auto sel = ag::gather_rows(codebook_, q.indices);
  q.z_q = ag::rows_to_nchw(sel, n, h, w);
  // straight-through: value of z_q, gradient of the identity on z_e
  q.straight_through = ag::add(latent, ag::stop_grad(ag::sub(q.z_q, latent)));
  return q;
}

ag::Var Daam::gate(const ag::Var& x) const {
  if (x->value.rank() != 4 || x->value.dim(1) != cfg_.dim)
    throw ConfigError("gate expects (N,D,h,w)");
  if (!x->value.all_finite()) throw NumericError("non-finite input to gate");
  double eps = cfg_.gate_eps;
  int n = x->value.dim(0);
  auto energy = ag::mul(lambda_, ag::sqrt_v(ag::add_scalar(
                                     ag::sum(ag::square(x), {2, 3}, false), eps)));  // (N,D)
  auto norm = ag::sqrt_v(ag::add_scalar(ag::mean(ag::square(energy), {1}, true), eps));  // (N,1)
  auto ratio = ag::div(energy, norm);
  auto g = ag::add_scalar(ag::tanh_v(ag::add(ag::mul(gamma_, ratio), beta_)), 1.0);
  return ag::mul(x, ag::reshape(g, {n, cfg_.dim, 1, 1}));
}

DegradationFeature Daam::features(const ag::Var& image, bool use_codebook) const {
  auto latent = extract(image);
  DegradationFeature f;
  ag::Var pre_gate;
  if (use_codebook) {
    auto q = quantize(latent);
    f.indices = std::move(q.indices);
    f.z_e = latent;
    f.z_q = q.z_q;
    pre_gate = q.straight_through;
  } else {
    pre_gate = latent;
  }
  f.map = gate(pre_gate);
  const auto& s = f.map->value.shape();
  f.flat = ag::reshape(f.map, {s[0], s[1] * s[2] * s[3]});
  f.pooled = ag::mean(f.map, {2, 3}, false);
  return f;
}

std::pair<ag::Var, ag::Var> Daam::codebook_losses(const ag::Var& z_e, const ag::Var& z_q) {
  if (!z_e->value.same_shape(z_q->value))
    throw ConfigError("codebook loss shape mismatch");
  auto codebook_loss = ag::mean_all(ag::square(ag::sub(ag::stop_grad(z_e), z_q)));
  auto commitment_loss = ag::mean_all(ag::square(ag::sub(z_e, ag::stop_grad(z_q))));
  return {codebook_loss, commitment_loss};
}

}  // namespace udair
