#include "backbone.hpp"

namespace udair {

BlockKind block_kind_from_name(const std::string& s) {
  if (s == "conv") return BlockKind::Conv;
  if (s == "transformer") return BlockKind::Transformer;
  throw ConfigError("unknown block kind: " + s);
}

const char* block_kind_name(BlockKind k) {
  return k == BlockKind::Conv ? "conv" : "transformer";
}

void BackboneConfig::validate() const {
  if (base_dim < 4) throw ConfigError("base_dim must be >= 4");
  if (levels < 2) throw ConfigError("levels must be >= 2");
  if (blocks_per_level < 1) throw ConfigError("blocks_per_level must be >= 1");
  if (inject_dim < 1) throw ConfigError("inject_dim must be >= 1");
  if (block_kind == BlockKind::Transformer && base_dim % attn_heads != 0)
    throw ConfigError("base_dim must be divisible by attn_heads");
}

Backbone::Block Backbone::make_block(ParamStore& store, const std::string& name,
                                     int channels, Rng& rng) {
  Block b;
  b.kind = cfg_.block_kind;
  if (b.kind == BlockKind::Conv) {
    b.c1 = Conv2d(store, ParamGroup::Restoration, name + ".c1", channels, channels, 3, 1, 1, rng);
    b.c2 = Conv2d(store, ParamGroup::Restoration, name + ".c2", channels, channels, 3, 1, 1, rng);
    return b;
  }
  b.heads = cfg_.attn_heads;
  b.ln1 = ChannelLayerNorm(store, ParamGroup::Restoration, name + ".ln1", channels);
  b.ln2 = ChannelLayerNorm(store, ParamGroup::Restoration, name + ".ln2", channels);
  b.q = Conv2d(store, ParamGroup::Restoration, name + ".q", channels, channels, 1, 1, 0, rng);
  b.k = Conv2d(store, ParamGroup::Restoration, name + ".k", channels, channels, 1, 1, 0, rng);
  b.v = Conv2d(store, ParamGroup::Restoration, name + ".v", channels, channels, 1, 1, 0, rng);
  b.attn_out =
      Conv2d(store, ParamGroup::Restoration, name + ".attn_out", channels, channels, 1, 1, 0, rng);
  b.attn_temp = store.add(ParamGroup::Restoration, name + ".attn_temp", Tensor::scalar(1.0));
  b.mlp1 = Conv2d(store, ParamGroup::Restoration, name + ".mlp1", channels, 2 * channels, 1, 1, 0, rng);
  b.mlp2 = Conv2d(store, ParamGroup::Restoration, name + ".mlp2", 2 * channels, channels, 1, 1, 0, rng);
  return b;
}

ag::Var Backbone::Block::forward(const ag::Var& x) const {
  if (kind == BlockKind::Conv)
    return ag::add(x, c2.forward(ag::gelu(c1.forward(x))));

  // channel attention: tokens are channels, attention map is (C/h x C/h)
  const auto& s = x->value.shape();
  int n = s[0], c = s[1], hw = s[2] * s[3];
  int ch = c / heads;
  auto z = ln1.forward(x);
  auto qv = ag::reshape(q.forward(z), {n * heads, ch, hw});
  auto kv = ag::reshape(k.forward(z), {n * heads, ch, hw});
  auto vv = ag::reshape(v.forward(z), {n * heads, ch, hw});
  auto qn = ag::l2_normalize_lastdim(qv, 1e-8);
  auto kn = ag::l2_normalize_lastdim(kv, 1e-8);
  auto attn = ag::softmax_lastdim(ag::mul(ag::bmm(qn, ag::transpose_last2(kn)), attn_temp));
  auto mixed = ag::reshape(ag::bmm(attn, vv), {n, c, s[2], s[3]});
  auto y = ag::add(x, attn_out.forward(mixed));
  auto m = mlp2.forward(ag::gelu(mlp1.forward(ln2.forward(y))));
  return ag::add(y, m);
}

Backbone::Backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  auto ch = [&](int level) { return cfg_.base_dim << level; };

  stem_ = Conv2d(store, ParamGroup::Restoration, "backbone.stem", 3, ch(0), 3, 1, 1, rng);
  for (int l = 0; l < cfg_.levels; ++l) {
    std::vector<Block> blocks;
    for (int i = 0; i < cfg_.blocks_per_level; ++i)
      blocks.push_back(make_block(store, "backbone.enc" + std::to_string(l) + ".b" +
                                             std::to_string(i), ch(l), rng));
    enc_blocks_.push_back(std::move(blocks));
    down_.push_back(Conv2d(store, ParamGroup::Restoration, "backbone.down" + std::to_string(l),
                           ch(l), ch(l + 1), 3, 2, 1, rng));
  }
  for (int i = 0; i < cfg_.blocks_per_level; ++i)
    mid_blocks_.push_back(
        make_block(store, "backbone.mid.b" + std::to_string(i), ch(cfg_.levels), rng));
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    up_.push_back(Conv2d(store, ParamGroup::Restoration, "backbone.up" + std::to_string(l),
                         ch(l + 1), ch(l), 3, 1, 1, rng));
    fuse_.push_back(Conv2d(store, ParamGroup::Restoration, "backbone.fuse" + std::to_string(l),
                           2 * ch(l) + cfg_.inject_dim, ch(l), 1, 1, 0, rng));
    std::vector<Block> blocks;
    for (int i = 0; i < cfg_.blocks_per_level; ++i)
      blocks.push_back(make_block(store, "backbone.dec" + std::to_string(l) + ".b" +
                                             std::to_string(i), ch(l), rng));
    dec_blocks_.push_back(std::move(blocks));
  }
  // zero-init head: the network starts as the identity on the input image
  head_ = Conv2d(store, ParamGroup::Restoration, "backbone.head", ch(0), 3, 3, 1, 1, rng,
                 /*groups=*/1, /*zero_init=*/true);
}

EncoderOutput Backbone::encode(const ag::Var& image) const {
  const auto& s = image->value.shape();
  if (image->value.rank() != 4 || s[1] != 3)
    throw ConfigError("encode expects (N,3,H,W)");
  int f = cfg_.downsample_factor();
  if (s[2] % f != 0 || s[3] % f != 0)
    throw ConfigError("image dims must be divisible by " + std::to_string(f) + ", got " +
                      image->value.shape_str());
  EncoderOutput out;
  out.input = image;
  auto x = stem_.forward(image);
  for (int l = 0; l < cfg_.levels; ++l) {
    for (const auto& b : enc_blocks_[size_t(l)]) x = b.forward(x);
    out.skips.push_back(x);
    x = down_[size_t(l)].forward(x);
  }
  for (const auto& b : mid_blocks_) x = b.forward(x);
  out.bottleneck = x;
  return out;
}

ag::Var Backbone::decode(const EncoderOutput& enc, const ag::Var& deg_map) const {
  if (!enc.input || !enc.bottleneck || int(enc.skips.size()) != cfg_.levels)
    throw ConfigError("decode got an incomplete encoder output");
  if (deg_map->value.rank() != 4 || deg_map->value.dim(1) != cfg_.inject_dim)
    throw ConfigError("degradation feature channels (" +
                      std::to_string(deg_map->value.dim(1)) + ") do not match inject_dim (" +
                      std::to_string(cfg_.inject_dim) + ")");
  const auto& bs = enc.bottleneck->value.shape();
  if (deg_map->value.dim(2) != bs[2] || deg_map->value.dim(3) != bs[3])
    throw ConfigError("degradation feature resolution does not match bottleneck");

  auto x = enc.bottleneck;
  for (int i = 0; i < cfg_.levels; ++i) {
    int level = cfg_.levels - 1 - i;
    x = up_[size_t(i)].forward(ag::upsample_nearest(x, 2));
    auto deg = ag::upsample_nearest(deg_map, 1 << (cfg_.levels - level));
    x = fuse_[size_t(i)].forward(
        ag::concat_channels({x, enc.skips[size_t(level)], deg}));
    for (const auto& b : dec_blocks_[size_t(i)]) x = b.forward(x);
  }
  return ag::add(enc.input, head_.forward(x));
}

}  // namespace udair
