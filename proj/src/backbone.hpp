#pragma once

#include <string>
#include <vector>

#include "nn.hpp"

namespace udair {

enum class BlockKind { Conv, Transformer };
BlockKind block_kind_from_name(const std::string& s);
const char* block_kind_name(BlockKind k);

struct BackboneConfig {
  int base_dim = 24;
  int levels = 3;  // downsampling stages; 3 stages = 8x reduction, 8x base dim
  int blocks_per_level = 1;
  BlockKind block_kind = BlockKind::Transformer;
  int attn_heads = 4;
  int inject_dim = 96;  // channel count of injected degradation features

  int downsample_factor() const { return 1 << levels; }
  int bottleneck_dim() const { return base_dim << levels; }
  void validate() const;
};

struct EncoderOutput {
  ag::Var input;       // the image the encoder consumed (residual base)
  ag::Var bottleneck;  // (N, base*2^levels, H/f, W/f)
  std::vector<ag::Var> skips;  // per level, full resolution first
};

// Restoration network: encoder/decoder with skip connections. Degradation
// features are nearest-resampled to each decoder level, concatenated with the
// skip features, and fused by a 1x1 projection before the level's blocks.
class Backbone {
public:
  Backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

  EncoderOutput encode(const ag::Var& image) const;
  // deg_map: (N, inject_dim, H/f, W/f); pass a zero map to bypass guidance.
  ag::Var decode(const EncoderOutput& enc, const ag::Var& deg_map) const;

  const BackboneConfig& config() const { return cfg_; }

private:
  struct Block {
    BlockKind kind = BlockKind::Conv;
    int heads = 1;
    Conv2d c1, c2;  // conv kind
    ChannelLayerNorm ln1, ln2;
    Conv2d q, k, v, attn_out, mlp1, mlp2;
    ag::Var attn_temp;

    ag::Var forward(const ag::Var& x) const;
  };

  Block make_block(ParamStore& store, const std::string& name, int channels, Rng& rng);

  BackboneConfig cfg_;
  Conv2d stem_, head_;
  std::vector<std::vector<Block>> enc_blocks_;  // per level
  std::vector<Conv2d> down_;
  std::vector<Block> mid_blocks_;
  std::vector<Conv2d> up_;    // 3x3 after nearest upsample, ch_{i+1} -> ch_i
  std::vector<Conv2d> fuse_;  // 1x1, 2*ch_i + inject_dim -> ch_i
  std::vector<std::vector<Block>> dec_blocks_;
};

}  // namespace udair
