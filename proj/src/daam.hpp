#pragma once

#include <utility>
#include <vector>

#include "nn.hpp"

namespace udair {

struct DaamConfig {
  int dim = 96;            // D, length of each code / latent channel count
  int codebook_size = 256; // K
  double gate_eps = 1e-5;
};

// Gated (and usually quantized) degradation feature in all the forms the rest
// of the pipeline consumes. pooled is the spatial mean of map; flat is the
// row-major flattening of map per sample.
struct DegradationFeature {
  ag::Var map;     // (N, D, h, w)
  ag::Var flat;    // (N, D*h*w)
  ag::Var pooled;  // (N, D)
  std::vector<int> indices;  // N*h*w code indices; empty when codebook bypassed
  // graph handles for the auxiliary losses (null when codebook bypassed)
  ag::Var z_e;
  ag::Var z_q;
};

// Index of the codebook row nearest to z in Euclidean distance; ties resolve
// to the lowest index.
int nearest_code(const double* z, int dim, const Tensor& codebook);
std::vector<int> nearest_codes(const Tensor& rows, const Tensor& codebook);

std::vector<int64_t> code_usage_histogram(const std::vector<int>& indices, int k);

// Degradation Aware and Analysis Module: a small convolutional extractor
// produces a D-channel latent at 8x reduction, the codebook snaps each
// spatial vector to its nearest prototype, and a channel gate recalibrates
// the result.
class Daam {
public:
  Daam(ParamStore& store, const DaamConfig& cfg, Rng& rng);

  // (N,3,H,W) -> (N,D,H/8,W/8); dims must be divisible by 8
  ag::Var extract(const ag::Var& image) const;

  struct Quantized {
    ag::Var straight_through;  // value of z_q, gradient of identity on z_e
    ag::Var z_q;               // gather through the codebook (codebook grads)
    std::vector<int> indices;
  };
  Quantized quantize(const ag::Var& latent) const;

  // E = lambda*sqrt(sum_hw x^2 + eps); N = sqrt(mean_c E^2 + eps);
  // g = 1 + tanh(gamma*E/N + beta); out = x*g
  ag::Var gate(const ag::Var& x) const;

  DegradationFeature features(const ag::Var& image, bool use_codebook) const;

  // (codebook_loss, commitment_loss): ||sg(z_e)-z_q||^2 and ||z_e-sg(z_q)||^2
  static std::pair<ag::Var, ag::Var> codebook_losses(const ag::Var& z_e, const ag::Var& z_q);

  const DaamConfig& config() const { return cfg_; }
  ag::Var codebook() const { return codebook_; }
  ag::Var gate_lambda() const { return lambda_; }
  ag::Var gate_gamma() const { return gamma_; }
  ag::Var gate_beta() const { return beta_; }

private:
  DaamConfig cfg_;
  Conv2d down1_, down2_, down3_;
  ag::Var codebook_;  // (K, D)
  ag::Var lambda_;    // scalar
  ag::Var gamma_, beta_;  // (D)
};

}  // namespace udair
