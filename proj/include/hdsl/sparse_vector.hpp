#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hdsl {

using FeatureId = std::int32_t;

// Sparse vector keyed by 0-based feature index. Entries are kept sorted by
// strictly increasing index and hold nonzero values only.
class SparseVector {
 public:
  using Entry = std::pair<FeatureId, double>;

  SparseVector() = default;

  // Sorts the entries, drops exact zeros, rejects duplicate indices.
  explicit SparseVector(std::vector<Entry> entries) : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) { return a.first < b.first; });
    std::size_t w = 0;
    for (std::size_t r = 0; r < entries_.size(); ++r) {
      if (entries_[r].first < 0) {
        throw std::invalid_argument("negative feature index in sparse vector");
      }
      if (w > 0 && entries_[w - 1].first == entries_[r].first) {
        throw std::invalid_argument("duplicate feature index in sparse vector");
      }
      if (entries_[r].second != 0.0) {
        entries_[w++] = entries_[r];
      }
    }
    entries_.resize(w);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t nnz() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // -1 when empty.
  FeatureId max_index() const { return entries_.empty() ? -1 : entries_.back().first; }

  // 0 when the feature is absent.
  double value_at(FeatureId f) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), f,
                               [](const Entry& e, FeatureId key) { return e.first < key; });
    if (it != entries_.end() && it->first == f) return it->second;
    return 0.0;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& [f, v] : entries_) s += v * v;
    return s;
  }

 private:
  std::vector<Entry> entries_;
};

inline bool operator==(const SparseVector& a, const SparseVector& b) {
  return a.entries() == b.entries();
}

// Dot product. Walks the shorter vector and binary-searches the longer one
// when their sizes are far apart, otherwise merges the two sorted lists.
inline double sparse_dot(const SparseVector& a, const SparseVector& b) {
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  if (ea.empty() || eb.empty()) return 0.0;
  const auto* small = &ea;
  const auto* big = &eb;
  if (small->size() > big->size()) std::swap(small, big);

  double s = 0.0;
  if (small->size() * 16 < big->size()) {
    for (const auto& [f, v] : *small) {
      auto it = std::lower_bound(big->begin(), big->end(), f,
                                 [](const SparseVector::Entry& e, FeatureId key) {
                                   return e.first < key;
                                 });
      if (it != big->end() && it->first == f) s += v * it->second;
    }
    return s;
  }
  std::size_t i = 0, j = 0;
  while (i < small->size() && j < big->size()) {
    FeatureId fi = (*small)[i].first;
    FeatureId fj = (*big)[j].first;
    if (fi == fj) {
      s += (*small)[i].second * (*big)[j].second;
      ++i;
      ++j;
    } else if (fi < fj) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

// Entrywise a - b; exact cancellations are dropped.
inline SparseVector sparse_diff(const SparseVector& a, const SparseVector& b) {
  std::vector<SparseVector::Entry> out;
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  out.reserve(ea.size() + eb.size());
  std::size_t i = 0, j = 0;
  while (i < ea.size() || j < eb.size()) {
    if (j == eb.size() || (i < ea.size() && ea[i].first < eb[j].first)) {
      out.push_back(ea[i++]);
    } else if (i == ea.size() || eb[j].first < ea[i].first) {
      out.emplace_back(eb[j].first, -eb[j].second);
      ++j;
    } else {
      double v = ea[i].second - eb[j].second;
      if (v != 0.0) out.emplace_back(ea[i].first, v);
      ++i;
      ++j;
    }
  }
  return SparseVector(std::move(out));
}

inline double squared_euclidean_distance(const SparseVector& a, const SparseVector& b) {
  // ||a||^2 - 2<a,b> + ||b||^2 accumulated without forming the difference
  double d = a.squared_norm() - 2.0 * sparse_dot(a, b) + b.squared_norm();
  return d < 0.0 ? 0.0 : d;
}

}  // namespace hdsl
