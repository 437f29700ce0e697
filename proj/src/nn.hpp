#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "common.hpp"

namespace udair {

// The three disjoint parameter groups of the framework: restoration weights,
// degradation-identification weights (including the codebook), and the
// adaptation weights updated only at test time.
enum class ParamGroup { Restoration, Awareness, Adaptation };

const char* param_group_name(ParamGroup g);
std::optional<ParamGroup> param_group_from_name(const std::string& s);

// Named registry for all learnable tensors. Names are unique; iteration is
// insertion-ordered, digests use sorted names so they are layout-stable.
class ParamStore {
public:
  struct Entry {
    std::string name;
    ParamGroup group;
    ag::Var var;
  };

  ag::Var add(ParamGroup group, const std::string& name, Tensor init);
  const Entry* find(const std::string& name) const;
  Entry* find(const std::string& name);

  std::vector<ag::Var> vars(std::optional<ParamGroup> group = std::nullopt) const;
  int64_t count(std::optional<ParamGroup> group = std::nullopt) const;
  // SHA-256 over the raw values of the groups' tensors, sorted by name.
  std::string digest(const std::vector<ParamGroup>& groups) const;

  const std::vector<Entry>& entries() const { return entries_; }

private:
  std::vector<Entry> entries_;
};

struct Conv2d {
  ag::Var w, b;
  int stride = 1, pad = 0, groups = 1;

  Conv2d() = default;
  // He-normal weight init; zero_init forces weights and bias to zero.
  Conv2d(ParamStore& store, ParamGroup group, const std::string& name, int cin,
         int cout, int kernel, int stride, int pad, Rng& rng, int groups = 1,
         bool zero_init = false);

  ag::Var forward(const ag::Var& x) const {
    return ag::conv2d(x, w, b, stride, pad, groups);
  }
};

struct Linear {
  ag::Var w, b;  // w: (out, in)

  Linear() = default;
  Linear(ParamStore& store, ParamGroup group, const std::string& name, int in,
         int out, Rng& rng);

  // x: (n, in) -> (n, out)
  ag::Var forward(const ag::Var& x) const {
    return ag::add(ag::matmul(x, ag::transpose2d(w)), b);
  }
};

// Per-channel affine layer normalization over the channel axis of NCHW maps.
struct ChannelLayerNorm {
  ag::Var gamma, beta;
  double eps = 1e-6;

  ChannelLayerNorm() = default;
  ChannelLayerNorm(ParamStore& store, ParamGroup group, const std::string& name,
                   int channels);
  ag::Var forward(const ag::Var& x) const;
};

}  // namespace udair
