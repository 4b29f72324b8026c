#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace hdsl {

// std::uniform_int_distribution is implementation-defined, so bounded draws
// are pinned here to keep seeded runs reproducible across standard libraries.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // rejection sampling over the largest multiple of n
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

// Selection sampling (order-preserving): draws k of {0, ..., n-1} without
// replacement, output sorted ascending. With k == n it returns 0..n-1.
inline std::vector<std::size_t> sample_without_replacement(std::mt19937_64& rng, std::size_t n,
                                                           std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t need = k;
  for (std::size_t i = 0; i < n && need > 0; ++i) {
    std::size_t remaining = n - i;
    if (uniform_index(rng, remaining) < need) {
      out.push_back(i);
      --need;
    }
  }
  return out;
}

}  // namespace hdsl
