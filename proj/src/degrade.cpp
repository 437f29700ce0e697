#include "degrade.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace udair {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Noise: return "noise";
    case Task::Haze: return "haze";
    case Task::Rain: return "rain";
    case Task::Lowlight: return "lowlight";
    case Task::Underwater: return "underwater";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  for (int i = 0; i < kNumTasks; ++i)
    if (s == task_name(Task(i))) return Task(i);
  throw ConfigError("unknown task: " + s);
}

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain domain_from_name(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw ConfigError("unknown domain: " + s);
}

double DegradationSpec::get(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw ConfigError(std::string("missing degradation parameter '") + name + "' for task " +
                      task_name(task));
  return it->second;
}

void DegradationSpec::validate() const {
  auto in = [&](const std::string& n, double lo, double hi, bool lo_open = false) {
    double v = get(n);
    if (!std::isfinite(v) || v < lo || v > hi || (lo_open && v == lo))
      throw ConfigError(std::string("degradation parameter '") + n + "' out of range for task " +
                        task_name(task));
  };
  switch (task) {
    case Task::Noise:
      in("sigma", 0.0, 1.0);
      break;
    case Task::Haze:
      in("t", 0.0, 1.0, /*lo_open=*/true);
      in("airlight", 0.0, 1.0);
      break;
    case Task::Rain:
      in("density", 0.0, 1.0);
      in("angle", -90.0, 90.0);
      in("intensity", 0.0, 1.0);
      break;
    case Task::Lowlight:
      in("gamma", 0.0, 16.0, /*lo_open=*/true);
      in("gain", 0.0, 4.0, /*lo_open=*/true);
      break;
    case Task::Underwater:
      in("att_r", 0.0, 1.0);
      in("att_g", 0.0, 1.0);
      in("att_b", 0.0, 1.0);
      in("cast", 0.0, 1.0);
      break;
  }
}

const std::vector<std::string>& task_param_names(Task t) {
  static const std::vector<std::string> noise = {"sigma"};
  static const std::vector<std::string> haze = {"t", "airlight"};
  static const std::vector<std::string> rain = {"density", "angle", "intensity"};
  static const std::vector<std::string> lowlight = {"gamma", "gain"};
  static const std::vector<std::string> underwater = {"att_r", "att_g", "att_b", "cast"};
  switch (t) {
    case Task::Noise: return noise;
    case Task::Haze: return haze;
    case Task::Rain: return rain;
    case Task::Lowlight: return lowlight;
    case Task::Underwater: return underwater;
  }
  return noise;
}

DegradationSpec sample_spec(Task task, Domain domain, const TaskRanges& ranges, Rng& rng) {
  DegradationSpec spec;
  spec.task = task;
  spec.domain = domain;
  for (const auto& name : task_param_names(task)) {
    auto it = ranges.find(name);
    if (it == ranges.end())
      throw ConfigError(std::string("no range configured for parameter '") + name + "' of task " +
                        task_name(task));
    spec.params[name] = rng.uniform(it->second.lo, it->second.hi);
  }
  spec.validate();
  return spec;
}

namespace {

Image degrade_noise(const Image& x, double sigma, Rng& rng) {
  Image y = x;
  if (sigma > 0.0)
    for (auto& v : y.tensor().vec()) v += sigma * rng.normal();
  y.clamp01();
  return y;
}

Image degrade_haze(const Image& x, double t, double airlight) {
  Image y = x;
  for (auto& v : y.tensor().vec()) v = t * v + (1.0 - t) * airlight;
  y.clamp01();
  return y;
}

Image degrade_lowlight(const Image& x, double gamma, double gain) {
  Image y = x;
  for (auto& v : y.tensor().vec()) v = gain * std::pow(v, gamma);
  y.clamp01();
  return y;
}

Image degrade_rain(const Image& x, double density, double angle_deg, double intensity,
                   Rng& rng) {
  int h = x.height(), w = x.width();
  // streak mask built from oriented line segments; max-deposit keeps the
  // mask in [0, intensity] even where streaks cross
  std::vector<double> mask(size_t(h) * size_t(w), 0.0);
  int count = int(std::lround(density * double(h) * double(w)));
  for (int s = 0; s < count; ++s) {
    double cy = rng.uniform(0.0, double(h));
    double cx = rng.uniform(0.0, double(w));
    double len = rng.uniform(0.15, 0.35) * double(std::min(h, w));
    double ang = (angle_deg + rng.uniform(-5.0, 5.0)) * kPi / 180.0;
    double dy = std::cos(ang), dx = std::sin(ang);  // angle 0 = vertical fall
    double amp = intensity * rng.uniform(0.6, 1.0);
    int steps = std::max(2, int(len * 2.0));
    for (int i = 0; i <= steps; ++i) {
      double f = double(i) / double(steps) - 0.5;
      int py = int(std::lround(cy + f * len * dy));
      int px = int(std::lround(cx + f * len * dx));
      if (py < 0 || py >= h || px < 0 || px >= w) continue;
      // taper toward the streak ends
      double taper = 1.0 - 1.6 * std::fabs(f);
      double v = amp * std::max(0.2, taper);
      size_t idx = size_t(py) * size_t(w) + size_t(px);
      mask[idx] = std::max(mask[idx], v);
    }
  }
  Image y = x;
  for (int c = 0; c < 3; ++c)
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px)
        y.at(c, py, px) += mask[size_t(py) * size_t(w) + size_t(px)];
  y.clamp01();
  return y;
}

Image degrade_underwater(const Image& x, double ar, double ag, double ab, double cast) {
  const double att[3] = {ar, ag, ab};
  // blue-green veil toward which the cast pulls the attenuated image
  const double veil[3] = {0.05, 0.45, 0.50};
  int h = x.height(), w = x.width();
  Image y(h, w);
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      double luma = (x.at(0, py, px) + x.at(1, py, px) + x.at(2, py, px)) / 3.0;
      for (int c = 0; c < 3; ++c) {
        double attenuated = x.at(c, py, px) * att[c];
        y.at(c, py, px) = (1.0 - cast) * attenuated + cast * veil[c] * (0.35 + 0.65 * luma);
      }
    }
  y.clamp01();
  return y;
}

}  // namespace

Image synthesize_degradation(const Image& clean, const DegradationSpec& spec, Rng& rng) {
  if (!clean.in_range01())
    throw DataError("clean image has values outside [0,1]");
  spec.validate();
  switch (spec.task) {
    case Task::Noise:
      return degrade_noise(clean, spec.get("sigma"), rng);
    case Task::Haze:
      return degrade_haze(clean, spec.get("t"), spec.get("airlight"));
    case Task::Rain:
      return degrade_rain(clean, spec.get("density"), spec.get("angle"),
                          spec.get("intensity"), rng);
    case Task::Lowlight:
      return degrade_lowlight(clean, spec.get("gamma"), spec.get("gain"));
    case Task::Underwater:
      return degrade_underwater(clean, spec.get("att_r"), spec.get("att_g"),
                                spec.get("att_b"), spec.get("cast"));
  }
  throw ConfigError("unhandled task");
}

Image synthesize_clean(int height, int width, Rng& rng) {
  Image img(height, width);
  // per-channel linear gradient base
  double base[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.25, 0.7);
    gy[c] = rng.uniform(-0.3, 0.3);
    gx[c] = rng.uniform(-0.3, 0.3);
  }
  // a couple of low-frequency waves shared across channels with per-channel amplitude
  struct Wave { double fy, fx, phase, amp[3]; };
  std::vector<Wave> waves(2);
  for (auto& wv : waves) {
    wv.fy = rng.uniform(0.5, 3.0);
    wv.fx = rng.uniform(0.5, 3.0);
    wv.phase = rng.uniform(0.0, 2.0 * kPi);
    for (int c = 0; c < 3; ++c) wv.amp[c] = rng.uniform(-0.12, 0.12);
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double fy = double(y) / double(height), fx = double(x) / double(width);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + gy[c] * fy + gx[c] * fx;
        for (const auto& wv : waves)
          v += wv.amp[c] * std::sin(2.0 * kPi * (wv.fy * fy + wv.fx * fx) + wv.phase);
        img.at(c, y, x) = v;
      }
    }
  // soft ellipses with random color
  int shapes = 3 + int(rng.below(4));
  for (int s = 0; s < shapes; ++s) {
    double cy = rng.uniform(0.1, 0.9) * height;
    double cx = rng.uniform(0.1, 0.9) * width;
    double ry = rng.uniform(0.08, 0.3) * height;
    double rx = rng.uniform(0.08, 0.3) * width;
    double col[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    double edge = rng.uniform(1.5, 4.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double dy = (y - cy) / ry, dx = (x - cx) / rx;
        double r2 = dy * dy + dx * dx;
        if (r2 > 2.5) continue;
        double a = 1.0 / (1.0 + std::exp(edge * (r2 - 1.0) * 4.0));
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = (1.0 - a) * img.at(c, y, x) + a * col[c];
      }
  }
  // keep a little headroom at both ends so degradations stay invertible
  for (auto& v : img.tensor().vec()) v = 0.03 + 0.94 * std::clamp(v, 0.0, 1.0);
  return img;
}

ColorShift sample_color_shift(Rng& rng, double strength) {
  ColorShift s;
  s.contrast = 1.0 + strength * rng.uniform(-1.0, 1.0);
  s.gain_r = 1.0 + strength * rng.uniform(-1.0, 1.0);
  s.gain_g = 1.0 + strength * rng.uniform(-1.0, 1.0);
  s.gain_b = 1.0 + strength * rng.uniform(-1.0, 1.0);
  return s;
}

Image apply_color_shift(const Image& img, const ColorShift& shift) {
  const double gains[3] = {shift.gain_r, shift.gain_g, shift.gain_b};
  Image y = img;
  for (int c = 0; c < 3; ++c)
    for (int py = 0; py < y.height(); ++py)
      for (int px = 0; px < y.width(); ++px) {
        double v = y.at(c, py, px);
        v = (v - 0.5) * shift.contrast + 0.5;
        y.at(c, py, px) = v * gains[c];
      }
  y.clamp01();
  return y;
}

}  // namespace udair
