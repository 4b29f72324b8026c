#pragma once

#include <cstdint>
#include <stdexcept>
#include <tuple>

#include "hdsl/sparse_vector.hpp"

namespace hdsl {

enum class BasisSign : std::uint8_t { positive, negative };

// Identifies one rank-one dictionary element lambda*(e_i + s*e_j)(e_i + s*e_j)^T
// with s = +1 (rewards co-occurrence of i and j) or s = -1 (penalizes it).
// Both signs are symmetric under swapping (i, j), so i < j canonically.
struct BasisElement {
  FeatureId i = 0;
  FeatureId j = 1;
  BasisSign sign = BasisSign::positive;

  BasisElement() = default;
  BasisElement(FeatureId a, FeatureId b, BasisSign s) : sign(s) {
    if (a == b) throw std::invalid_argument("basis element requires two distinct features");
    if (a < 0 || b < 0) throw std::invalid_argument("negative feature index in basis element");
    i = a < b ? a : b;
    j = a < b ? b : a;
  }

  double sign_factor() const { return sign == BasisSign::positive ? 1.0 : -1.0; }

  friend bool operator==(const BasisElement& a, const BasisElement& b) {
    return a.i == b.i && a.j == b.j && a.sign == b.sign;
  }
  friend bool operator<(const BasisElement& a, const BasisElement& b) {
    return std::tuple(a.i, a.j, a.sign) < std::tuple(b.i, b.j, b.sign);
  }
};

// <x, (e_i + s*e_j)> — the rank-one factor evaluated against a sparse vector.
// Scores, utilities and embeddings all reduce to products of this form.
inline double basis_factor(const BasisElement& b, const SparseVector& x) {
  return x.value_at(b.i) + b.sign_factor() * x.value_at(b.j);
}

}  // namespace hdsl
