#include "dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace udair {

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<SamplePair> load_folder_dataset(const fs::path& root, Task task, Split split,
                                            Domain domain) {
  fs::path base = root / task_name(task) / split_name(split);
  fs::path input_dir = base / "input";
  fs::path target_dir = base / "target";
  if (!fs::is_directory(input_dir))
    throw DataError("missing dataset directory: " + input_dir.string());

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(input_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty())
    std::cerr << "warning: no samples under " << input_dir << "\n";

  std::vector<SamplePair> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    fs::path tgt = target_dir / n;
    if (!fs::exists(tgt))
      throw DataError("degraded image '" + n + "' has no clean counterpart in " +
                      target_dir.string());
    SamplePair p;
    p.degraded = read_png((input_dir / n).string());
    p.clean = read_png(tgt.string());
    if (!p.degraded.tensor().same_shape(p.clean.tensor()))
      throw DataError("pair shape mismatch for " + n);
    p.task = task;
    p.domain = domain;
    p.name = n;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::vector<SamplePair>> load_all_tasks(const fs::path& root, Split split,
                                                    Domain domain) {
  std::vector<std::vector<SamplePair>> out;
  for (int t = 0; t < kNumTasks; ++t)
    out.push_back(load_folder_dataset(root, Task(t), split, domain));
  return out;
}

AugmentParams draw_augment_params(int height, int width, int crop, Rng& rng) {
  if (height < crop || width < crop)
    throw DataError("image smaller than crop size");
  AugmentParams p;
  p.y0 = int(rng.below(height - crop + 1));
  p.x0 = int(rng.below(width - crop + 1));
  p.flip_h = rng.bernoulli(0.5);
  p.flip_v = rng.bernoulli(0.5);
  p.rot90 = int(rng.below(4));
  return p;
}

namespace {

Image transform_one(const Image& img, int crop, const AugmentParams& p) {
  Image c = img.crop(p.y0, p.x0, crop, crop);
  Image out(crop, crop);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        int sy = p.flip_v ? crop - 1 - y : y;
        int sx = p.flip_h ? crop - 1 - x : x;
        out.at(ch, y, x) = c.at(ch, sy, sx);
      }
  for (int r = 0; r < p.rot90; ++r) {
    Image rot(crop, crop);
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
          rot.at(ch, y, x) = out.at(ch, x, crop - 1 - y);
    out = rot;
  }
  return out;
}

}  // namespace

SamplePair apply_augment(const SamplePair& pair, int crop, const AugmentParams& p) {
  if (pair.degraded.height() < crop || pair.degraded.width() < crop)
    throw DataError("image smaller than crop size");
  SamplePair out = pair;
  out.degraded = transform_one(pair.degraded, crop, p);
  out.clean = transform_one(pair.clean, crop, p);
  return out;
}

SamplePair augment(const SamplePair& pair, int crop, Rng& rng) {
  auto p = draw_augment_params(pair.degraded.height(), pair.degraded.width(), crop, rng);
  return apply_augment(pair, crop, p);
}

BalancedBatchStream::BalancedBatchStream(std::vector<size_t> task_sizes, BatchPlan plan,
                                         uint64_t seed)
    : task_sizes_(std::move(task_sizes)), plan_(plan), seed_(seed) {
  if (int(task_sizes_.size()) != plan_.n_tasks)
    throw ConfigError("task count does not match batch plan");
  size_t max_size = 0;
  for (size_t i = 0; i < task_sizes_.size(); ++i) {
    if (task_sizes_[i] == 0)
      throw ConfigError(std::string("task ") + task_name(Task(int(i))) + " has no samples");
    max_size = std::max(max_size, task_sizes_[i]);
  }
  batches_per_epoch_ =
      int((max_size + size_t(plan_.samples_per_task) - 1) / size_t(plan_.samples_per_task));
}

void BalancedBatchStream::start_epoch() {
  ++epoch_;
  cursor_ = 0;
  epoch_draws_.assign(task_sizes_.size(), {});
  int draws = batches_per_epoch_ * plan_.samples_per_task;
  for (size_t t = 0; t < task_sizes_.size(); ++t) {
    Rng rng(mix_seed(seed_, "epoch", uint64_t(epoch_), t));
    auto& list = epoch_draws_[t];
    list.reserve(size_t(draws));
    for (int i = 0; i < draws; ++i) list.push_back(int(rng.below(int64_t(task_sizes_[t]))));
  }
}

std::vector<std::pair<int, int>> BalancedBatchStream::next() {
  if (epoch_ < 0 || cursor_ >= batches_per_epoch_) start_epoch();
  std::vector<std::pair<int, int>> batch;
  batch.reserve(size_t(plan_.batch_size()));
  for (int t = 0; t < plan_.n_tasks; ++t)
    for (int s = 0; s < plan_.samples_per_task; ++s)
      batch.emplace_back(t, epoch_draws_[size_t(t)]
                                [size_t(cursor_ * plan_.samples_per_task + s)]);
  ++cursor_;
  return batch;
}

namespace {

void check_strict_shift(const SynthConfig& cfg) {
  for (const auto& [task, tc] : cfg.tasks) {
    for (const auto& name : task_param_names(task)) {
      auto s = tc.source.find(name);
      auto t = tc.target.find(name);
      if (s == tc.source.end() || t == tc.target.end())
        throw ConfigError(std::string("missing range for '") + name + "' of task " +
                          task_name(task));
      if (cfg.strict_shift && s->second.overlaps(t->second))
        throw ConfigError(std::string("source/target ranges overlap for '") + name +
                          "' of task " + task_name(task) +
                          " (strict shift requires disjoint regimes)");
    }
  }
}

std::string pad4(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.png", i);
  return buf;
}

}  // namespace

void generate_dataset(const SynthConfig& cfg, const fs::path& out_root) {
  if (cfg.tasks.size() != size_t(kNumTasks))
    throw ConfigError("synthesis config must cover all five tasks");
  check_strict_shift(cfg);

  struct Plan {
    Domain domain;
    Split split;
    int count;
  };
  const Plan plans[] = {
      {Domain::Source, Split::Train, cfg.train_per_task},
      {Domain::Source, Split::Test, cfg.test_per_task},
      {Domain::Target, Split::Test, cfg.test_per_task},
  };

  for (const auto& plan : plans) {
    for (const auto& [task, tc] : cfg.tasks) {
      fs::path base = out_root / domain_name(plan.domain) / task_name(task) /
                      split_name(plan.split);
      fs::create_directories(base / "input");
      fs::create_directories(base / "target");
      json specs = json::array();
      for (int i = 0; i < plan.count; ++i) {
        uint64_t sample_seed = mix_seed(cfg.seed, std::string(domain_name(plan.domain)) + "/" +
                                                      task_name(task) + "/" +
                                                      split_name(plan.split),
                                        uint64_t(i));
        Rng rng(sample_seed);
        Image clean = synthesize_clean(cfg.image_size, cfg.image_size, rng);
        const TaskRanges& ranges = plan.domain == Domain::Source ? tc.source : tc.target;
        DegradationSpec spec = sample_spec(task, plan.domain, ranges, rng);
        Image degraded = synthesize_degradation(clean, spec, rng);

        json rec;
        rec["file"] = pad4(i);
        rec["task"] = task_name(task);
        rec["domain"] = domain_name(plan.domain);
        rec["seed"] = sample_seed;
        rec["params"] = json::object();
        for (const auto& [k, v] : spec.params) rec["params"][k] = v;
        if (plan.domain == Domain::Target) {
          ColorShift shift = sample_color_shift(rng, cfg.color_shift_strength);
          degraded = apply_color_shift(degraded, shift);
          rec["color_shift"] = {{"contrast", shift.contrast},
                                {"gain_r", shift.gain_r},
                                {"gain_g", shift.gain_g},
                                {"gain_b", shift.gain_b}};
        }
        write_png(degraded, (base / "input" / pad4(i)).string());
        write_png(clean, (base / "target" / pad4(i)).string());
        specs.push_back(std::move(rec));
      }
      std::ofstream f(base / "specs.json");
      if (!f) throw IoError("cannot write sidecar under " + base.string());
      f << specs.dump(2) << "\n";
    }
  }
}

}  // namespace udair
