#include "nn.hpp"

#include <algorithm>
#include <cmath>

#include "sha256.hpp"

namespace udair {

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Restoration: return "restoration";
    case ParamGroup::Awareness: return "awareness";
    case ParamGroup::Adaptation: return "adaptation";
  }
  return "?";
}

std::optional<ParamGroup> param_group_from_name(const std::string& s) {
  if (s == "restoration" || s == "theta_r") return ParamGroup::Restoration;
  if (s == "awareness" || s == "theta_a") return ParamGroup::Awareness;
  if (s == "adaptation" || s == "theta_da") return ParamGroup::Adaptation;
  return std::nullopt;
}

ag::Var ParamStore::add(ParamGroup group, const std::string& name, Tensor init) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  auto var = ag::param(std::move(init));
  entries_.push_back({name, group, var});
  return var;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<ag::Var> ParamStore::vars(std::optional<ParamGroup> group) const {
  std::vector<ag::Var> out;
  for (const auto& e : entries_)
    if (!group || e.group == *group) out.push_back(e.var);
  return out;
}

int64_t ParamStore::count(std::optional<ParamGroup> group) const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (!group || e.group == *group) n += e.var->value.numel();
  return n;
}

std::string ParamStore::digest(const std::vector<ParamGroup>& groups) const {
  std::vector<const Entry*> sel;
  for (const auto& e : entries_)
    if (std::find(groups.begin(), groups.end(), e.group) != groups.end())
      sel.push_back(&e);
  std::sort(sel.begin(), sel.end(),
            [](const Entry* a, const Entry* b) { return a->name < b->name; });
  Sha256 h;
  for (const Entry* e : sel) {
    h.update(e->name.data(), e->name.size());
    const auto& v = e->var->value;
    h.update(v.data(), size_t(v.numel()) * sizeof(double));
  }
  return h.hex_digest();
}

Conv2d::Conv2d(ParamStore& store, ParamGroup group, const std::string& name, int cin,
               int cout, int kernel, int stride_, int pad_, Rng& rng, int groups_,
               bool zero_init)
    : stride(stride_), pad(pad_), groups(groups_) {
  int fan_in = (cin / groups_) * kernel * kernel;
  Tensor wt({cout, cin / groups_, kernel, kernel});
  if (!zero_init) {
    double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& v : wt.vec()) v = rng.normal(0.0, stddev);
  }
  w = store.add(group, name + ".w", std::move(wt));
  b = store.add(group, name + ".b", Tensor({cout}));
}

Linear::Linear(ParamStore& store, ParamGroup group, const std::string& name, int in,
               int out, Rng& rng) {
  Tensor wt({out, in});
  double stddev = std::sqrt(2.0 / double(in));
  for (auto& v : wt.vec()) v = rng.normal(0.0, stddev);
  w = store.add(group, name + ".w", std::move(wt));
  b = store.add(group, name + ".b", Tensor({out}));
}

ChannelLayerNorm::ChannelLayerNorm(ParamStore& store, ParamGroup group,
                                   const std::string& name, int channels) {
  gamma = store.add(group, name + ".gamma", Tensor::full({1, channels, 1, 1}, 1.0));
  beta = store.add(group, name + ".beta", Tensor({1, channels, 1, 1}));
}

ag::Var ChannelLayerNorm::forward(const ag::Var& x) const {
  auto mu = ag::mean(x, {1}, true);
  auto centered = ag::sub(x, mu);
  auto var = ag::mean(ag::square(centered), {1}, true);
  auto xhat = ag::div(centered, ag::sqrt_v(ag::add_scalar(var, eps)));
  return ag::add(ag::mul(xhat, gamma), beta);
}

}  // namespace udair
