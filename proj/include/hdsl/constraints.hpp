#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdsl/basis.hpp"
#include "hdsl/dataset.hpp"
#include "hdsl/rng.hpp"
#include "hdsl/similarity_model.hpp"
#include "hdsl/sparse_vector.hpp"

namespace hdsl {

// "x should be more similar to y than to z": indices into the training set.
struct TripletConstraint {
  std::int32_t x_id = 0;
  std::int32_t y_id = 0;
  std::int32_t z_id = 0;

  friend bool operator==(const TripletConstraint&, const TripletConstraint&) = default;
};

// Triplet constraints over one training dataset, with the difference vectors
// d_t = y_t - z_t precomputed so per-constraint inner products against a basis
// need only four indexed lookups. The dataset must outlive the set.
class ConstraintSet {
 public:
  ConstraintSet(const Dataset& train, std::vector<TripletConstraint> triplets)
      : train_(&train), triplets_(std::move(triplets)) {
    diffs_.reserve(triplets_.size());
    x_norm2_.reserve(triplets_.size());
    diff_norm2_.reserve(triplets_.size());
    const auto n = static_cast<std::int32_t>(train.size());
    for (const auto& t : triplets_) {
      if (t.x_id < 0 || t.x_id >= n || t.y_id < 0 || t.y_id >= n || t.z_id < 0 || t.z_id >= n) {
        throw std::invalid_argument("triplet references instance outside the dataset");
      }
      if (t.y_id == t.z_id) {
        throw std::invalid_argument("triplet target equals impostor");
      }
      if (train.labels[t.x_id] != train.labels[t.y_id] ||
          train.labels[t.x_id] == train.labels[t.z_id]) {
        throw std::invalid_argument("triplet violates label structure");
      }
      diffs_.push_back(sparse_diff(train.instances[t.y_id], train.instances[t.z_id]));
      x_norm2_.push_back(train.instances[t.x_id].squared_norm());
      diff_norm2_.push_back(diffs_.back().squared_norm());
    }
  }

  std::size_t size() const { return triplets_.size(); }
  bool empty() const { return triplets_.empty(); }
  const Dataset& dataset() const { return *train_; }
  const std::vector<TripletConstraint>& triplets() const { return triplets_; }
  const TripletConstraint& triplet(std::size_t t) const { return triplets_[t]; }
  const SparseVector& x_of(std::size_t t) const { return train_->instances[triplets_[t].x_id]; }
  const SparseVector& diff_of(std::size_t t) const { return diffs_[t]; }

  // (1/T) sum ||A^t||_F^2 = (1/T) sum ||x_t||^2 ||y_t - z_t||^2
  double lipschitz_constant() const {
    double s = 0.0;
    for (std::size_t t = 0; t < size(); ++t) s += x_norm2_[t] * diff_norm2_[t];
    return triplets_.empty() ? 0.0 : s / static_cast<double>(size());
  }

 private:
  const Dataset* train_;
  std::vector<TripletConstraint> triplets_;
  std::vector<SparseVector> diffs_;
  std::vector<double> x_norm2_;
  std::vector<double> diff_norm2_;
};

// <A^t, B> for B = lambda*(e_i + s*e_j)(e_i + s*e_j)^T with A^t = x (y-z)^T:
// lambda * (x_i + s*x_j) * (d_i + s*d_j).
inline double constraint_basis_inner(const ConstraintSet& cs, std::size_t t,
                                     const BasisElement& b, double lambda) {
  return lambda * basis_factor(b, cs.x_of(t)) * basis_factor(b, cs.diff_of(t));
}

// Exact margin <A^t, M> rebuilt from scratch over the active atoms.
inline double constraint_model_inner(const ConstraintSet& cs, std::size_t t,
                                     const SimilarityModel& m) {
  return score(m, cs.x_of(t), cs.diff_of(t));
}

// Margin under M = I, via the two dot products (identity scoring path).
inline double identity_margin(const ConstraintSet& cs, std::size_t t) {
  const auto& trip = cs.triplet(t);
  const auto& data = cs.dataset();
  return sparse_dot(data.instances[trip.x_id], data.instances[trip.y_id]) -
         sparse_dot(data.instances[trip.x_id], data.instances[trip.z_id]);
}

namespace detail {

inline std::vector<std::vector<std::int32_t>> indices_by_class(const Dataset& train,
                                                               std::vector<int>& class_ids) {
  class_ids.clear();
  std::vector<std::vector<std::int32_t>> groups;
  for (std::size_t n = 0; n < train.size(); ++n) {
    int label = train.labels[n];
    auto it = std::find(class_ids.begin(), class_ids.end(), label);
    std::size_t g;
    if (it == class_ids.end()) {
      class_ids.push_back(label);
      groups.emplace_back();
      g = groups.size() - 1;
    } else {
      g = static_cast<std::size_t>(it - class_ids.begin());
    }
    groups[g].push_back(static_cast<std::int32_t>(n));
  }
  return groups;
}

inline void warn(std::vector<std::string>* sink, std::string msg) {
  if (sink != nullptr) sink->push_back(std::move(msg));
}

}  // namespace detail

// One constraint per (target, impostor) pair: the n_targets nearest same-label
// neighbors crossed with the n_impostors nearest other-label neighbors under
// Euclidean distance. Distance ties break toward the smaller instance index.
// Instances whose class is too small (or with too few impostors available)
// are skipped with a warning. Zero-difference pairs (duplicate points with
// different labels) are dropped: they add a constant to the loss and nothing
// to the gradient.
inline ConstraintSet build_triplets_knn(const Dataset& train, std::size_t n_targets,
                                        std::size_t n_impostors,
                                        std::vector<std::string>* warnings = nullptr) {
  if (n_targets < 1 || n_impostors < 1) {
    throw std::invalid_argument("build_triplets_knn: need n_targets >= 1 and n_impostors >= 1");
  }
  const std::size_t n = train.size();
  std::vector<double> norm2(n);
  for (std::size_t i = 0; i < n; ++i) norm2[i] = train.instances[i].squared_norm();

  std::vector<TripletConstraint> out;
  std::vector<std::pair<double, std::int32_t>> same, diff;
  for (std::size_t q = 0; q < n; ++q) {
    same.clear();
    diff.clear();
    for (std::size_t m = 0; m < n; ++m) {
      if (m == q) continue;
      double d2 = norm2[q] - 2.0 * sparse_dot(train.instances[q], train.instances[m]) + norm2[m];
      auto& bucket = train.labels[m] == train.labels[q] ? same : diff;
      bucket.emplace_back(d2 < 0.0 ? 0.0 : d2, static_cast<std::int32_t>(m));
    }
    if (same.size() < n_targets || diff.size() < n_impostors) {
      detail::warn(warnings, "instance " + std::to_string(q) +
                                 " skipped: not enough neighbors of the required labels");
      continue;
    }
    std::partial_sort(same.begin(), same.begin() + static_cast<std::ptrdiff_t>(n_targets),
                      same.end());
    std::partial_sort(diff.begin(), diff.begin() + static_cast<std::ptrdiff_t>(n_impostors),
                      diff.end());
    for (std::size_t a = 0; a < n_targets; ++a) {
      for (std::size_t b = 0; b < n_impostors; ++b) {
        std::int32_t y = same[a].second;
        std::int32_t z = diff[b].second;
        if (train.instances[y] == train.instances[z]) {
          detail::warn(warnings, "dropped zero-difference triplet (" + std::to_string(q) + ", " +
                                     std::to_string(y) + ", " + std::to_string(z) + ")");
          continue;
        }
        out.push_back({static_cast<std::int32_t>(q), y, z});
      }
    }
  }
  return ConstraintSet(train, std::move(out));
}

// per_instance constraints per anchor x: y drawn uniformly from the class of x
// (excluding x), z uniformly from the other classes. Reproducible under seed.
inline ConstraintSet build_triplets_random(const Dataset& train, std::size_t per_instance,
                                           std::uint64_t seed,
                                           std::vector<std::string>* warnings = nullptr) {
  if (per_instance < 1) {
    throw std::invalid_argument("build_triplets_random: per_instance must be >= 1");
  }
  std::vector<int> class_ids;
  auto groups = detail::indices_by_class(train, class_ids);
  if (groups.size() < 2) {
    throw std::invalid_argument("build_triplets_random: need at least two classes");
  }
  // flat per-class complements for impostor draws
  std::vector<std::vector<std::int32_t>> others(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t h = 0; h < groups.size(); ++h) {
      if (h == g) continue;
      others[g].insert(others[g].end(), groups[h].begin(), groups[h].end());
    }
    std::sort(others[g].begin(), others[g].end());
  }

  std::mt19937_64 rng(seed);
  std::vector<TripletConstraint> out;
  out.reserve(per_instance * train.size());
  for (std::size_t q = 0; q < train.size(); ++q) {
    int label = train.labels[q];
    std::size_t g = static_cast<std::size_t>(
        std::find(class_ids.begin(), class_ids.end(), label) - class_ids.begin());
    const auto& mates = groups[g];
    if (mates.size() < 2) {
      detail::warn(warnings, "instance " + std::to_string(q) + " skipped: singleton class");
      continue;
    }
    std::size_t self_pos = static_cast<std::size_t>(
        std::find(mates.begin(), mates.end(), static_cast<std::int32_t>(q)) - mates.begin());
    for (std::size_t c = 0; c < per_instance; ++c) {
      std::size_t r = uniform_index(rng, mates.size() - 1);
      std::int32_t y = mates[r >= self_pos ? r + 1 : r];
      std::int32_t z = others[g][uniform_index(rng, others[g].size())];
      if (train.instances[y] == train.instances[z]) {
        detail::warn(warnings, "dropped zero-difference triplet (" + std::to_string(q) + ", " +
                                   std::to_string(y) + ", " + std::to_string(z) + ")");
        continue;
      }
      out.push_back({static_cast<std::int32_t>(q), y, z});
    }
  }
  return ConstraintSet(train, std::move(out));
}

// Text dump "x_id y_id z_id", one triplet per line.
inline void dump_triplets(const ConstraintSet& cs, std::ostream& out) {
  for (const auto& t : cs.triplets()) {
    out << t.x_id << ' ' << t.y_id << ' ' << t.z_id << '\n';
  }
}

inline ConstraintSet load_triplets(const Dataset& train, std::istream& in) {
  std::vector<TripletConstraint> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    long long x = 0, y = 0, z = 0;
    if (tok.size() != 3 || !parse_long(tok[0], x) || !parse_long(tok[1], y) ||
        !parse_long(tok[2], z)) {
      throw ParseError(line_no, "bad triplet line '" + line + "'");
    }
    out.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y),
                   static_cast<std::int32_t>(z)});
  }
  return ConstraintSet(train, std::move(out));
}

}  // namespace hdsl
