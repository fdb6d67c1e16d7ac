#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wzmerge {

// All faults in the library surface as Error; message prefix names the subsystem
// ("config:", "sim:", "data:", "model:", "policy:", "io:").
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string to_hex(uint64_t v);

// Shortest round-trip decimal form; used for every float written to disk so
// byte-identical reruns only depend on the values themselves.
std::string fmt_double(double v);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

void split_csv_line(std::string_view line, std::vector<std::string_view>& out);

// Linear interpolation between order statistics on a sorted sample:
// rank h = (n - 1) * p, result = x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)]).
double percentile_sorted(const std::vector<double>& sorted, double p);

// Deterministic random source. std::mt19937_64 output is pinned by the standard;
// the distribution math lives here instead of <random> adaptors so that draws are
// bit-stable across standard libraries as well.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // exponential with given mean; uses 1 - u so the argument of log is never 0
  double exponential(double mean) { return -mean * std::log(1.0 - uniform01()); }

  bool bernoulli(double p) { return uniform01() < p; }

  // unbiased via rejection
  uint64_t below(uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Derives an independent stream seed from a base seed and a context label.
inline uint64_t substream_seed(uint64_t base, std::string_view label) {
  return base ^ fnv1a64(label);
}

}  // namespace wzmerge
