#ifndef TREEVIEW_RANDOM_HPP
#define TREEVIEW_RANDOM_HPP

#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace treeview {

// std::shuffle and the std distributions are implementation-defined, so
// seeded results would differ between standard libraries. These helpers only
// rely on the fully specified mt19937_64 engine.

/// Unbiased integer in [0, bound) via rejection sampling.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

/// Fisher-Yates shuffle with a reproducible stream.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  shuffle(perm, rng);
  return perm;
}

}  // namespace treeview

#endif  // TREEVIEW_RANDOM_HPP
