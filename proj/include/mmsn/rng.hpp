#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace mmsn {

// splitmix64 finalizer; used both to expand seeds and to hash stream tags.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed, a tag, and up to
/// three indices. All randomness in the project flows through seeds built
/// here, so any unit of work can be replayed in isolation.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0,
                          std::uint64_t c = 0);

/// xoshiro256++ with self-contained uniform/normal draws. Behaviour is fixed
/// by this implementation, not by the standard library, so streams are
/// reproducible everywhere.
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi);

  bool bernoulli(double p);

  /// Standard normal (Box-Muller; second draw cached).
  double normal();
  double normal(double mean, double stddev);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices from [0, n), in increasing order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::uint64_t s_[4];
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace mmsn
