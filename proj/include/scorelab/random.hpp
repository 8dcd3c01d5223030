#pragma once

#include <cmath>
#include <cstdint>

#include "scorelab/tensor.hpp"

namespace scorelab {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix3(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed ^ 0x8BADF00D5EEDF00Dull);
  h = splitmix64(h ^ stream * 0xD1B54A32D192ED03ull);
  h = splitmix64(h ^ counter * 0xA0761D6478BD642Full);
  return h;
}

}  // namespace detail

// Counter-based random source: the draw at position k is a pure function of
// (seed, stream, k), so independent units of work take disjoint streams and
// replay is exact regardless of batching or thread count.
class RandomSource {
 public:
  RandomSource(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t c) noexcept { counter_ = c; }

  // Derived source with a statistically independent stream id.
  RandomSource substream(std::uint64_t idx) const {
    return RandomSource(seed_, detail::splitmix64(stream_ ^ (idx + 0x632BE59BD9B4E019ull)));
  }

  std::uint64_t next_u64() { return detail::mix3(seed_, stream_, counter_++); }

  // Uniform on (0,1].
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two counter slots.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  Tensor gaussian_tensor(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.span()) v = gaussian();
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.span()) v = uniform(lo, hi);
    return t;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// Fisher-Yates shuffle of an index permutation, driven by the source.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, RandomSource& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace scorelab
