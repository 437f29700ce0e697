#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "degrade.hpp"
#include "image.hpp"

namespace udair {

struct SamplePair {
  Image degraded;
  Image clean;
  Task task = Task::Noise;
  Domain domain = Domain::Source;
  std::string name;
};

enum class Split { Train, Test };
const char* split_name(Split s);

// Reads `root/<task>/<split>/input/*.png` paired with `.../target/*.png` by
// identical filename, in lexicographic order.
std::vector<SamplePair> load_folder_dataset(const std::filesystem::path& root, Task task,
                                            Split split, Domain domain);
// All five tasks; missing task directory is a DataError.
std::vector<std::vector<SamplePair>> load_all_tasks(const std::filesystem::path& root,
                                                    Split split, Domain domain);

struct AugmentParams {
  int y0 = 0, x0 = 0;
  bool flip_h = false, flip_v = false;
  int rot90 = 0;  // quarter turns, counter-clockwise
};

AugmentParams draw_augment_params(int height, int width, int crop, Rng& rng);
// Identical geometric transform on both images; output is crop x crop.
SamplePair apply_augment(const SamplePair& pair, int crop, const AugmentParams& p);
SamplePair augment(const SamplePair& pair, int crop, Rng& rng);

struct BatchPlan {
  int n_tasks = kNumTasks;
  int samples_per_task = 2;
  int batch_size() const { return n_tasks * samples_per_task; }
};

// Task-major balanced batches; every task is resampled with replacement each
// epoch to the size of the largest task. Order is a pure function of the seed.
class BalancedBatchStream {
public:
  BalancedBatchStream(std::vector<size_t> task_sizes, BatchPlan plan, uint64_t seed);

  // One batch of (task, sample index) in task-major order.
  std::vector<std::pair<int, int>> next();
  int batches_per_epoch() const { return batches_per_epoch_; }

private:
  void start_epoch();

  std::vector<size_t> task_sizes_;
  BatchPlan plan_;
  uint64_t seed_;
  int64_t epoch_ = -1;
  int cursor_ = 0;
  int batches_per_epoch_ = 0;
  std::vector<std::vector<int>> epoch_draws_;  // per task, length batches*N_s
};

// ---- synthetic dataset generation ----

struct SynthTaskConfig {
  TaskRanges source;
  TaskRanges target;
};

struct SynthConfig {
  int image_size = 64;
  int train_per_task = 100;
  int test_per_task = 10;
  uint64_t seed = 0;
  double color_shift_strength = 0.05;
  bool strict_shift = true;  // require disjoint source/target parameter ranges
  std::map<Task, SynthTaskConfig> tasks;
};

// Writes `out/source/<task>/{train,test}/...` and `out/target/<task>/test/...`
// plus a specs.json sidecar per split recording task, parameters, seed and
// domain tag for every image.
void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_root);

}  // namespace udair
