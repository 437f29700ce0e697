#pragma once

#include <map>
#include <string>

#include "common.hpp"
#include "image.hpp"

namespace udair {

enum class Task { Noise = 0, Haze = 1, Rain = 2, Lowlight = 3, Underwater = 4 };
constexpr int kNumTasks = 5;

const char* task_name(Task t);
Task task_from_name(const std::string& s);

enum class Domain { Source = 0, Target = 1 };
const char* domain_name(Domain d);
Domain domain_from_name(const std::string& s);

// A concrete degradation instance: the task plus its named real parameters.
struct DegradationSpec {
  Task task = Task::Noise;
  Domain domain = Domain::Source;
  std::map<std::string, double> params;

  double get(const std::string& name) const;
  // Throws ConfigError when a parameter is missing or out of range.
  void validate() const;
};

// Inclusive uniform sampling range for one parameter.
struct ParamRange {
  double lo = 0.0, hi = 0.0;
  bool overlaps(const ParamRange& o) const { return lo <= o.hi && o.lo <= hi; }
};
using TaskRanges = std::map<std::string, ParamRange>;

// Parameter names per task (the schema of DegradationSpec.params).
const std::vector<std::string>& task_param_names(Task t);

DegradationSpec sample_spec(Task task, Domain domain, const TaskRanges& ranges, Rng& rng);

// Applies the task's degradation to a clean image. Output has the same shape,
// is clamped to [0,1], and is a pure function of (clean, spec, rng stream).
Image synthesize_degradation(const Image& clean, const DegradationSpec& spec, Rng& rng);

// Procedural clean image: smooth gradients, low-frequency texture, and a few
// soft shapes. Used by the synthetic dataset generator.
Image synthesize_clean(int height, int width, Rng& rng);

// Mild global color/contrast perturbation used on target-domain images.
struct ColorShift {
  double contrast = 1.0;
  double gain_r = 1.0, gain_g = 1.0, gain_b = 1.0;
};
ColorShift sample_color_shift(Rng& rng, double strength);
Image apply_color_shift(const Image& img, const ColorShift& shift);

}  // namespace udair
