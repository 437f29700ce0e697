#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sha256.hpp"

using nlohmann::json;

namespace udair {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char(v >> (8 * i)));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char(v >> (8 * i)));
}
uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[off + size_t(i)])) << (8 * i);
  return v;
}
uint64_t get_u64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(s[off + size_t(i)])) << (8 * i);
  return v;
}

static_assert(sizeof(double) == 8, "payload format assumes 8-byte doubles");

bool host_is_little_endian() {
  uint16_t probe = 1;
  uint8_t b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

void append_doubles(std::string& payload, const Tensor& t) {
  size_t off = payload.size();
  payload.resize(off + size_t(t.numel()) * 8);
  std::memcpy(payload.data() + off, t.data(), size_t(t.numel()) * 8);
}

json array_meta(const std::string& name, const std::string& group, const Tensor& t,
                uint64_t offset) {
  json a;
  a["name"] = name;
  a["group"] = group;
  a["shape"] = t.shape();
  a["offset"] = offset;  // element offset into the payload
  a["count"] = t.numel();
  return a;
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["backbone"] = {
      {"base_dim", cfg.backbone.base_dim},
      {"levels", cfg.backbone.levels},
      {"blocks_per_level", cfg.backbone.blocks_per_level},
      {"block_kind", block_kind_name(cfg.backbone.block_kind)},
      {"attn_heads", cfg.backbone.attn_heads},
  };
  j["daam"] = {
      {"dim", cfg.daam.dim},
      {"codebook_size", cfg.daam.codebook_size},
      {"gate_eps", cfg.daam.gate_eps},
  };
  j["dam"] = {{"se_reduction", cfg.dam.se_reduction}};
  j["init_seed"] = cfg.init_seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  const auto& b = j.at("backbone");
  cfg.backbone.base_dim = b.at("base_dim").get<int>();
  cfg.backbone.levels = b.at("levels").get<int>();
  cfg.backbone.blocks_per_level = b.at("blocks_per_level").get<int>();
  cfg.backbone.block_kind = block_kind_from_name(b.at("block_kind").get<std::string>());
  cfg.backbone.attn_heads = b.at("attn_heads").get<int>();
  const auto& d = j.at("daam");
  cfg.daam.dim = d.at("dim").get<int>();
  cfg.daam.codebook_size = d.at("codebook_size").get<int>();
  cfg.daam.gate_eps = d.at("gate_eps").get<double>();
  cfg.backbone.inject_dim = cfg.daam.dim;
  cfg.dam.dim = cfg.daam.dim;
  cfg.dam.se_reduction = j.at("dam").at("se_reduction").get<int>();
  cfg.init_seed = j.at("init_seed").get<uint64_t>();
  return cfg;
}

void save_checkpoint(const std::string& path, const Model& model, const json& run_config,
                     uint64_t rng_state, int64_t step, const AnchorSet* anchors) {
  if (!host_is_little_endian())
    throw FormatError("checkpoint writer requires a little-endian host");

  json meta;
  meta["format"] = "udair-checkpoint";
  meta["version"] = kVersion;
  meta["endianness"] = "little";
  meta["model"] = model_config_to_json(model.config());
  meta["run_config"] = run_config;
  meta["rng_state"] = rng_state;
  meta["step"] = step;

  std::string payload;
  json arrays = json::array();
  for (const auto& e : model.params().entries()) {
    arrays.push_back(
        array_meta(e.name, param_group_name(e.group), e.var->value, payload.size() / 8));
    append_doubles(payload, e.var->value);
  }
  if (anchors) {
    meta["anchor_counts"] = json::array();
    for (size_t t = 0; t < anchors->anchors.size(); ++t) {
      const auto& a = anchors->anchors[t];
      arrays.push_back(array_meta("anchor.mean." + std::to_string(t), "anchor", a.mean,
                                  payload.size() / 8));
      append_doubles(payload, a.mean);
      arrays.push_back(array_meta("anchor.cov." + std::to_string(t), "anchor", a.cov,
                                  payload.size() / 8));
      append_doubles(payload, a.cov);
      meta["anchor_counts"].push_back(a.count);
    }
  }
  meta["arrays"] = std::move(arrays);

  std::string meta_str = meta.dump();
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, meta_str.size());
  out += meta_str;
  put_u64(out, payload.size());
  out += payload;

  Sha256 h;
  h.update(meta_str.data(), meta_str.size());
  h.update(payload.data(), payload.size());
  std::string digest = h.hex_digest();
  out += digest;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint file: " + path);
  uint32_t version = get_u32(buf, 4);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  uint64_t meta_len = get_u64(buf, 8);
  size_t pos = 16;
  if (pos + meta_len + 8 > buf.size()) throw FormatError("truncated checkpoint: " + path);
  std::string meta_str = buf.substr(pos, meta_len);
  pos += meta_len;
  uint64_t payload_len = get_u64(buf, pos);
  pos += 8;
  if (pos + payload_len + 64 > buf.size()) throw FormatError("truncated checkpoint: " + path);
  std::string payload = buf.substr(pos, payload_len);
  pos += payload_len;
  std::string stored_digest = buf.substr(pos, 64);

  Sha256 h;
  h.update(meta_str.data(), meta_str.size());
  h.update(payload.data(), payload.size());
  if (h.hex_digest() != stored_digest)
    throw FormatError("checkpoint integrity check failed: " + path);

  json meta = json::parse(meta_str, nullptr, false);
  if (meta.is_discarded()) throw FormatError("corrupt checkpoint metadata: " + path);
  if (meta.value("version", 0u) != kVersion)
    throw FormatError("unsupported checkpoint version in metadata");

  LoadedCheckpoint out;
  out.model = std::make_unique<Model>(model_config_from_json(meta.at("model")));
  out.run_config = meta.value("run_config", json::object());
  out.rng_state = meta.at("rng_state").get<uint64_t>();
  out.step = meta.at("step").get<int64_t>();

  auto read_array = [&](const json& a, Tensor& dst) {
    uint64_t offset = a.at("offset").get<uint64_t>();
    int64_t count = a.at("count").get<int64_t>();
    if ((offset + uint64_t(count)) * 8 > payload.size())
      throw FormatError("array out of payload bounds: " + a.at("name").get<std::string>());
    std::vector<int> shape = a.at("shape").get<std::vector<int>>();
    dst = Tensor(shape);
    std::memcpy(dst.data(), payload.data() + offset * 8, size_t(count) * 8);
  };

  std::optional<AnchorSet> anchors;
  if (meta.contains("anchor_counts")) {
    anchors.emplace();
    anchors->anchors.resize(meta["anchor_counts"].size());
    for (size_t t = 0; t < anchors->anchors.size(); ++t)
      anchors->anchors[t].count = meta["anchor_counts"][t].get<int64_t>();
  }
  for (const auto& a : meta.at("arrays")) {
    std::string name = a.at("name").get<std::string>();
    std::string group = a.at("group").get<std::string>();
    if (group == "anchor") {
      if (!anchors) throw FormatError("anchor array without anchor metadata");
      size_t t = size_t(std::stoul(name.substr(name.rfind('.') + 1)));
      if (t >= anchors->anchors.size()) throw FormatError("anchor index out of range");
      if (name.find("anchor.mean.") == 0)
        read_array(a, anchors->anchors[t].mean);
      else
        read_array(a, anchors->anchors[t].cov);
      continue;
    }
    auto* entry = out.model->params().find(name);
    if (!entry) throw FormatError("checkpoint parameter not in model: " + name);
    Tensor value;
    read_array(a, value);
    if (!value.same_shape(entry->var->value))
      throw FormatError("checkpoint shape mismatch for " + name);
    entry->var->value = std::move(value);
  }
  out.model->snapshot_dam_template();
  out.anchors = std::move(anchors);
  return out;
}

}  // namespace udair
