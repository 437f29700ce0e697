#include "config.hpp"

#include <fstream>
#include <sstream>

using nlohmann::json;

namespace udair {

namespace {

// Desk-scale profile: small conv backbone, quick to train on one CPU core.
const char* kCiProfile = R"JSON({
  "profile": "ci",
  "seed": 0,
  "data": {
    "root": "data",
    "image_size": 64,
    "crop": 32,
    "train_per_task": 100,
    "test_per_task": 10,
    "augment": true,
    "strict_shift": true,
    "color_shift_strength": 0.05,
    "ranges": {
      "noise": {
        "source": {"sigma": [0.02, 0.08]},
        "target": {"sigma": [0.10, 0.18]}
      },
      "haze": {
        "source": {"t": [0.55, 0.80], "airlight": [0.70, 0.85]},
        "target": {"t": [0.30, 0.50], "airlight": [0.88, 1.00]}
      },
      "rain": {
        "source": {"density": [0.0008, 0.0020], "angle": [-15.0, 15.0], "intensity": [0.25, 0.45]},
        "target": {"density": [0.0030, 0.0060], "angle": [25.0, 50.0], "intensity": [0.50, 0.75]}
      },
      "lowlight": {
        "source": {"gamma": [1.8, 2.4], "gain": [0.40, 0.55]},
        "target": {"gamma": [2.6, 3.2], "gain": [0.20, 0.32]}
      },
      "underwater": {
        "source": {"att_r": [0.50, 0.70], "att_g": [0.85, 0.95], "att_b": [0.80, 0.90], "cast": [0.20, 0.35]},
        "target": {"att_r": [0.25, 0.45], "att_g": [0.75, 0.84], "att_b": [0.65, 0.79], "cast": [0.45, 0.65]}
      }
    }
  },
  "model": {
    "base_dim": 8,
    "levels": 3,
    "blocks_per_level": 1,
    "block_kind": "conv",
    "attn_heads": 4,
    "daam_dim": 16,
    "codebook_size": 32,
    "gate_eps": 1e-5,
    "se_reduction": 4
  },
  "train": {
    "alpha": 1.0,
    "beta": 0.2,
    "vq_codebook_weight": 1.0,
    "vq_commitment_weight": 0.25,
    "lr": 1e-3,
    "lr_floor": 1e-6,
    "schedule": "cosine",
    "steps": 600,
    "samples_per_task": 2,
    "weight_decay": 1e-4,
    "variant": "full",
    "tau": 0.1,
    "cscl_denominator": "literal",
    "dead_code_reseed": true,
    "compute_anchors": true,
    "init_checkpoint": ""
  },
  "tta": {
    "steps": 5,
    "lr": 1e5,
    "reset_per_sample": true
  },
  "eval": {
    "checkpoint": "",
    "ssim_window": 8,
    "ssim_gaussian": false,
    "kl_bins": 64
  }
})JSON";

// Paper-scale dimensions: 96-dim degradation space, base dim 24, 8x
// bottleneck, 128 crops, alpha/beta 1/0.2, lr 1e-4 cosine, 5 TTA steps.
const char* kPaperProfile = R"JSON({
  "profile": "paper",
  "seed": 0,
  "data": {
    "root": "data",
    "image_size": 128,
    "crop": 128,
    "train_per_task": 700,
    "test_per_task": 50,
    "augment": true,
    "strict_shift": true,
    "color_shift_strength": 0.05,
    "ranges": {
      "noise": {
        "source": {"sigma": [0.02, 0.08]},
        "target": {"sigma": [0.10, 0.18]}
      },
      "haze": {
        "source": {"t": [0.55, 0.80], "airlight": [0.70, 0.85]},
        "target": {"t": [0.30, 0.50], "airlight": [0.88, 1.00]}
      },
      "rain": {
        "source": {"density": [0.0008, 0.0020], "angle": [-15.0, 15.0], "intensity": [0.25, 0.45]},
        "target": {"density": [0.0030, 0.0060], "angle": [25.0, 50.0], "intensity": [0.50, 0.75]}
      },
      "lowlight": {
        "source": {"gamma": [1.8, 2.4], "gain": [0.40, 0.55]},
        "target": {"gamma": [2.6, 3.2], "gain": [0.20, 0.32]}
      },
      "underwater": {
        "source": {"att_r": [0.50, 0.70], "att_g": [0.85, 0.95], "att_b": [0.80, 0.90], "cast": [0.20, 0.35]},
        "target": {"att_r": [0.25, 0.45], "att_g": [0.75, 0.84], "att_b": [0.65, 0.79], "cast": [0.45, 0.65]}
      }
    }
  },
  "model": {
    "base_dim": 24,
    "levels": 3,
    "blocks_per_level": 1,
    "block_kind": "transformer",
    "attn_heads": 4,
    "daam_dim": 96,
    "codebook_size": 256,
    "gate_eps": 1e-5,
    "se_reduction": 4
  },
  "train": {
    "alpha": 1.0,
    "beta": 0.2,
    "vq_codebook_weight": 1.0,
    "vq_commitment_weight": 0.25,
    "lr": 1e-4,
    "lr_floor": 1e-6,
    "schedule": "cosine",
    "steps": 2000,
    "samples_per_task": 2,
    "weight_decay": 1e-4,
    "variant": "full",
    "tau": 0.1,
    "cscl_denominator": "literal",
    "dead_code_reseed": true,
    "compute_anchors": true,
    "init_checkpoint": ""
  },
  "tta": {
    "steps": 5,
    "lr": 1e-4,
    "reset_per_sample": true
  },
  "eval": {
    "checkpoint": "",
    "ssim_window": 8,
    "ssim_gaussian": false,
    "kl_bins": 64
  }
})JSON";

void merge_checked(json& base, const json& incoming, const std::string& prefix) {
  if (!incoming.is_object())
    throw ConfigError("config section must be an object at '" + prefix + "'");
  for (auto it = incoming.begin(); it != incoming.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
    json& slot = base[it.key()];
    const json& v = it.value();
    if (slot.is_object()) {
      merge_checked(slot, v, key);
    } else if (slot.is_array()) {
      if (!v.is_array()) throw ConfigError("expected an array for key: " + key);
      slot = v;
    } else if (slot.is_number() && v.is_number()) {
      slot = v;
    } else if (slot.is_boolean() && v.is_boolean()) {
      slot = v;
    } else if (slot.is_string() && v.is_string()) {
      slot = v;
    } else {
      throw ConfigError("type mismatch for key: " + key);
    }
  }
}

TaskRanges ranges_from_json(const json& j, Task task) {
  TaskRanges out;
  for (const auto& name : task_param_names(task)) {
    if (!j.contains(name))
      throw ConfigError(std::string("missing range for '") + name + "'");
    const json& r = j.at(name);
    if (!r.is_array() || r.size() != 2)
      throw ConfigError(std::string("range for '") + name + "' must be [lo, hi]");
    ParamRange pr{r[0].get<double>(), r[1].get<double>()};
    if (pr.lo > pr.hi) throw ConfigError(std::string("inverted range for '") + name + "'");
    out[name] = pr;
  }
  return out;
}

}  // namespace

RunConfig RunConfig::profile(const std::string& name) {
  RunConfig cfg;
  if (name == "ci")
    cfg.root_ = json::parse(kCiProfile);
  else if (name == "paper")
    cfg.root_ = json::parse(kPaperProfile);
  else
    throw ConfigError("unknown profile: " + name + " (expected 'ci' or 'paper')");
  return cfg;
}

const std::vector<std::string>& RunConfig::profile_names() {
  static const std::vector<std::string> names = {"ci", "paper"};
  return names;
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  json incoming = json::parse(f, nullptr, false);
  if (incoming.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  merge_checked(root_, incoming, "");
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted_key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty config key");
  json* node = &root_;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      throw ConfigError("unknown config key: " + dotted_key);
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) throw ConfigError("unknown config key: " + dotted_key);
  json& slot = (*node)[leaf];
  try {
    if (slot.is_boolean()) {
      if (value == "true" || value == "1")
        slot = true;
      else if (value == "false" || value == "0")
        slot = false;
      else
        throw ConfigError("expected a boolean for " + dotted_key);
    } else if (slot.is_number_integer()) {
      slot = std::stoll(value);
    } else if (slot.is_number()) {
      slot = std::stod(value);
    } else if (slot.is_string()) {
      slot = value;
    } else if (slot.is_array()) {
      json arr = json::array();
      std::stringstream vs(value);
      std::string item;
      while (std::getline(vs, item, ',')) arr.push_back(std::stod(item));
      slot = arr;
    } else {
      throw ConfigError("cannot set structured key " + dotted_key);
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse value '" + value + "' for " + dotted_key);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for " + dotted_key);
  }
}

void RunConfig::write_snapshot(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write config snapshot: " + path);
  f << root_.dump(2) << "\n";
}

uint64_t RunConfig::seed() const { return root_.at("seed").get<uint64_t>(); }

std::string RunConfig::data_root() const { return root_.at("data").at("root").get<std::string>(); }

SynthConfig RunConfig::synth_config() const {
  const json& d = root_.at("data");
  SynthConfig cfg;
  cfg.image_size = d.at("image_size").get<int>();
  cfg.train_per_task = d.at("train_per_task").get<int>();
  cfg.test_per_task = d.at("test_per_task").get<int>();
  cfg.seed = seed();
  cfg.color_shift_strength = d.at("color_shift_strength").get<double>();
  cfg.strict_shift = d.at("strict_shift").get<bool>();
  if (cfg.image_size < 8 || cfg.image_size % 8 != 0)
    throw ConfigError("data.image_size must be a positive multiple of 8");
  if (cfg.train_per_task < 1 || cfg.test_per_task < 1)
    throw ConfigError("per-task sample counts must be positive");
  const json& ranges = d.at("ranges");
  for (int t = 0; t < kNumTasks; ++t) {
    Task task = Task(t);
    const json& tr = ranges.at(task_name(task));
    SynthTaskConfig tc;
    tc.source = ranges_from_json(tr.at("source"), task);
    tc.target = ranges_from_json(tr.at("target"), task);
    cfg.tasks[task] = std::move(tc);
  }
  return cfg;
}

ModelConfig RunConfig::model_config() const {
  const json& m = root_.at("model");
  ModelConfig cfg;
  cfg.backbone.base_dim = m.at("base_dim").get<int>();
  cfg.backbone.levels = m.at("levels").get<int>();
  cfg.backbone.blocks_per_level = m.at("blocks_per_level").get<int>();
  cfg.backbone.block_kind = block_kind_from_name(m.at("block_kind").get<std::string>());
  cfg.backbone.attn_heads = m.at("attn_heads").get<int>();
  cfg.daam.dim = m.at("daam_dim").get<int>();
  cfg.daam.codebook_size = m.at("codebook_size").get<int>();
  cfg.daam.gate_eps = m.at("gate_eps").get<double>();
  cfg.backbone.inject_dim = cfg.daam.dim;
  cfg.dam.dim = cfg.daam.dim;
  cfg.dam.se_reduction = m.at("se_reduction").get<int>();
  cfg.init_seed = seed();
  cfg.validate();
  return cfg;
}

TrainSettings RunConfig::train_settings() const {
  const json& t = root_.at("train");
  TrainSettings s;
  s.alpha = t.at("alpha").get<double>();
  s.beta = t.at("beta").get<double>();
  s.vq_codebook_weight = t.at("vq_codebook_weight").get<double>();
  s.vq_commitment_weight = t.at("vq_commitment_weight").get<double>();
  s.lr = t.at("lr").get<double>();
  s.lr_floor = t.at("lr_floor").get<double>();
  s.schedule = t.at("schedule").get<std::string>();
  s.steps = t.at("steps").get<int>();
  s.samples_per_task = t.at("samples_per_task").get<int>();
  s.crop = root_.at("data").at("crop").get<int>();
  s.augment = root_.at("data").at("augment").get<bool>();
  s.weight_decay = t.at("weight_decay").get<double>();
  s.variant = variant_from_name(t.at("variant").get<std::string>());
  s.cscl.tau = t.at("tau").get<double>();
  s.cscl.denominator = cscl_denominator_from_name(t.at("cscl_denominator").get<std::string>());
  s.seed = seed();
  s.dead_code_reseed = t.at("dead_code_reseed").get<bool>();
  if (s.crop < 8 || s.crop % 8 != 0)
    throw ConfigError("data.crop must be a positive multiple of 8");
  return s;
}

TtaConfig RunConfig::tta_config() const {
  const json& t = root_.at("tta");
  TtaConfig c;
  c.steps = t.at("steps").get<int>();
  c.lr = t.at("lr").get<double>();
  c.reset_per_sample = t.at("reset_per_sample").get<bool>();
  if (c.steps < 0) throw ConfigError("tta.steps must be >= 0");
  if (c.lr <= 0) throw ConfigError("tta.lr must be positive");
  return c;
}

SsimConfig RunConfig::ssim_config() const {
  const json& e = root_.at("eval");
  SsimConfig c;
  c.window = e.at("ssim_window").get<int>();
  c.gaussian = e.at("ssim_gaussian").get<bool>();
  if (c.window < 2) throw ConfigError("eval.ssim_window must be >= 2");
  return c;
}

int RunConfig::kl_bins() const {
  int bins = root_.at("eval").at("kl_bins").get<int>();
  if (bins < 1) throw ConfigError("eval.kl_bins must be positive");
  return bins;
}

std::string RunConfig::eval_checkpoint() const {
  return root_.at("eval").at("checkpoint").get<std::string>();
}

std::string RunConfig::init_checkpoint() const {
  return root_.at("train").at("init_checkpoint").get<std::string>();
}

bool RunConfig::compute_anchors() const {
  return root_.at("train").at("compute_anchors").get<bool>();
}

Variant RunConfig::variant() const {
  return variant_from_name(root_.at("train").at("variant").get<std::string>());
}

}  // namespace udair
