#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace sft {

// mt19937_64 is bit-exact across standard libraries; the std distributions are
// not, so uniform/normal/below are derived here from the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return lo + (hi - lo) * uniform();
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  // Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Combines a seed with a stream tag into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

template <class... Tags>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t first, std::uint64_t second, Tags... rest) {
  return derive_seed(derive_seed(seed, first), second, rest...);
}

// FNV-1a, used for string tags and config hashes.
std::uint64_t fnv1a(std::string_view text);

// Fisher-Yates shuffle driven by Rng::below.
void shuffle(std::span<std::size_t> items, Rng& rng);

}  // namespace sft
