#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace extraction_lab {

// Seeded random source shared by every stochastic step of a run. All draws go
// through the methods below so that a (seed, call sequence) pair fully
// determines the output.
class Random {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Random(std::uint64_t seed = 0) : engine_(seed) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Random::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Fisher-Yates, back to front.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  // Independent child stream; `salt` separates sibling streams.
  Random fork(std::uint64_t salt) { return Random(engine_() ^ (salt * 0x9E3779B97F4A7C15ULL)); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// k distinct picks from `items`, uniformly without replacement (partial
// Fisher-Yates), in draw order.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> items, std::size_t k, Random& rng) {
  if (k > items.size()) throw std::invalid_argument("sample_without_replacement: k exceeds population");
  for (std::size_t i = 0; i < k; ++i) std::swap(items[i], items[i + rng.index(items.size() - i)]);
  items.resize(k);
  return items;
}

}  // namespace extraction_lab
