#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace udair {

// Error categories; the C API and the CLI exit codes map 1:1 onto these.
enum class ErrorKind {
  Internal = 1,
  Config = 2,
  Data = 3,
  Numeric = 4,
  Io = 5,
  Format = 6,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorKind::Format, m) {}
};

// Deterministic random stream. All distributions are implemented on top of
// the raw 64-bit output so sequences are reproducible across platforms and
// standard library versions.
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
    // splitmix64 warm-up so nearby seeds give unrelated streams
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  int64_t below(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child stream keyed by a label; hashing keeps substreams independent of
  // how many draws the parent has made.
  Rng child(const std::string& tag) const {
    uint64_t h = 0xcbf29ce484222325ull ^ state_;
    for (char c : tag) {
      h ^= uint64_t(uint8_t(c));
      h *= 0x100000001b3ull;
    }
    return Rng(h);
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; have_cached_ = false; }

private:
  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

inline uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a = 0,
                         uint64_t b = 0) {
  uint64_t h = 0xcbf29ce484222325ull ^ seed;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (char c : tag) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001b3ull;
  }
  mix(a);
  mix(b);
  return h;
}

}  // namespace udair
