#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <vector>

#include "hdsl/constraints.hpp"
#include "hdsl/loss.hpp"
#include "hdsl/rng.hpp"
#include "hdsl/similarity_model.hpp"

namespace hdsl {

// Per-constraint margins <A^t, M^(k)>, maintained incrementally across
// iterations and rebuilt from scratch on a schedule to bound drift.
struct MarginCache {
  std::vector<double> margins;
};

inline double objective(const MarginCache& cache) {
  double s = 0.0;
  for (double m : cache.margins) s += smoothed_hinge(m);
  return cache.margins.empty() ? 0.0 : s / static_cast<double>(cache.margins.size());
}

// c_t = l'(<A^t, M>); satisfied constraints (margin >= 1) get exactly 0 and
// are skipped by every consumer.
inline std::vector<double> gradient_coefficients(const MarginCache& cache) {
  std::vector<double> c(cache.margins.size());
  for (std::size_t t = 0; t < c.size(); ++t) c[t] = smoothed_hinge_deriv(cache.margins[t]);
  return c;
}

enum class ForwardStrategy { exact, minibatch, heuristic };

struct OptimizerConfig {
  double lambda = 1.0;
  ForwardStrategy strategy = ForwardStrategy::exact;
  std::size_t minibatch_size = 1000;  // clamped to T
  std::size_t max_iterations = 500;
  double line_search_tol = 1e-6;
  double gap_tolerance = 1e-6;  // stopping rule under the exact strategy
  std::size_t validation_every = 50;
  std::uint64_t seed = 0;
  double drop_tol = 1e-12;
  std::size_t cache_rebuild_every = 500;
  std::size_t threads = 1;
  bool keep_snapshots = false;
  bool check_structural_bounds = true;
};

struct ForwardCandidate {
  BasisElement basis;
  double utility = 0.0;  // <B, grad estimate>
};

namespace detail {

inline std::uint64_t pack_pair(FeatureId a, FeatureId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Sparse view of the gradient estimate (1/|batch|) sum_t c_t * x_t d_t^T:
// directed off-diagonal cells plus a separate diagonal.
struct GradientSurrogate {
  std::unordered_map<std::uint64_t, double> cross;
  std::unordered_map<FeatureId, double> diag;

  void add(FeatureId a, FeatureId b, double v) {
    if (a == b) {
      diag[a] += v;
    } else {
      cross[pack_pair(a, b)] += v;
    }
  }

  void merge(const GradientSurrogate& other) {
    for (const auto& [k, v] : other.cross) cross[k] += v;
    for (const auto& [k, v] : other.diag) diag[k] += v;
  }

  void scale(double factor) {
    for (auto& [k, v] : cross) v *= factor;
    for (auto& [k, v] : diag) v *= factor;
  }

  bool empty() const { return cross.empty() && diag.empty(); }
};

inline void accumulate_range(const ConstraintSet& cs, const std::vector<double>& coeffs,
                             std::span<const std::size_t> batch, GradientSurrogate& g) {
  for (std::size_t t : batch) {
    double c = coeffs[t];
    if (c == 0.0) continue;
    for (const auto& [a, xv] : cs.x_of(t).entries()) {
      double cx = c * xv;
      for (const auto& [b, dv] : cs.diff_of(t).entries()) {
        g.add(a, b, cx * dv);
      }
    }
  }
}

inline GradientSurrogate build_surrogate(const ConstraintSet& cs, const std::vector<double>& coeffs,
                                         std::span<const std::size_t> batch, std::size_t threads) {
  GradientSurrogate g;
  if (threads <= 1 || batch.size() < 2 * threads) {
    accumulate_range(cs, coeffs, batch, g);
  } else {
    // contiguous chunks, merged in chunk order so results do not depend on
    // thread scheduling
    std::vector<GradientSurrogate> parts(threads);
    std::vector<std::thread> workers;
    std::size_t chunk = (batch.size() + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
      std::size_t lo = w * chunk;
      std::size_t hi = std::min(batch.size(), lo + chunk);
      if (lo >= hi) break;
      workers.emplace_back([&, lo, hi, w] {
        accumulate_range(cs, coeffs, batch.subspan(lo, hi - lo), parts[w]);
      });
    }
    for (auto& th : workers) th.join();
    for (const auto& part : parts) g.merge(part);
  }
  g.scale(1.0 / static_cast<double>(batch.size()));
  return g;
}

struct CandidateBest {
  bool found = false;
  BasisElement basis;
  double utility = 0.0;

  // tie order: positive sign first, then lexicographic (i, j)
  void consider(FeatureId i, FeatureId j, BasisSign sign, double u) {
    BasisElement b(i, j, sign);
    if (!found || u < utility ||
        (u == utility && std::tuple(b.sign, b.i, b.j) < std::tuple(basis.sign, basis.i, basis.j))) {
      found = true;
      basis = b;
      utility = u;
    }
  }
};

// Two smallest diagonal values by (value, index) over all d features; features
// absent from the map count as 0.
inline std::pair<FeatureId, FeatureId> smallest_diagonal_pair(
    const std::unordered_map<FeatureId, double>& diag, FeatureId dimension) {
  auto better = [](std::pair<double, FeatureId> a, std::pair<double, FeatureId> b) {
    return a < b;
  };
  std::pair<double, FeatureId> best1{std::numeric_limits<double>::infinity(), -1};
  std::pair<double, FeatureId> best2 = best1;
  auto offer = [&](double v, FeatureId f) {
    std::pair<double, FeatureId> cand{v, f};
    if (better(cand, best1)) {
      best2 = best1;
      best1 = cand;
    } else if (better(cand, best2)) {
      best2 = cand;
    }
  };
  for (const auto& [f, v] : diag) offer(v, f);
  // up to two zero-valued features outside the map
  std::vector<FeatureId> present;
  present.reserve(diag.size());
  for (const auto& [f, v] : diag) present.push_back(f);
  std::sort(present.begin(), present.end());
  FeatureId cursor = 0;
  int found = 0;
  for (std::size_t p = 0; p <= present.size() && found < 2 && cursor < dimension; ++p) {
    FeatureId stop = p < present.size() ? present[p] : dimension;
    while (cursor < stop && found < 2) {
      offer(0.0, cursor);
      ++cursor;
      ++found;
    }
    if (p < present.size()) cursor = present[p] + 1;
  }
  return {best1.second, best2.second};
}

// argmin over all signed feature pairs of <B, G>. Only pairs with a nonzero
// symmetrized cross cell can beat the best diagonal-only pair, so those plus
// that one pair form a sufficient candidate set.
inline std::optional<ForwardCandidate> best_basis_from_surrogate(const GradientSurrogate& g,
                                                                 FeatureId dimension,
                                                                 double lambda) {
  if (g.empty()) return std::nullopt;
  auto diag_at = [&](FeatureId f) {
    auto it = g.diag.find(f);
    return it == g.diag.end() ? 0.0 : it->second;
  };

  std::unordered_map<std::uint64_t, double> sym;
  sym.reserve(g.cross.size());
  for (const auto& [key, v] : g.cross) {
    FeatureId a = static_cast<FeatureId>(key >> 32);
    FeatureId b = static_cast<FeatureId>(key & 0xffffffffu);
    sym[pack_pair(std::min(a, b), std::max(a, b))] += v;
  }

  CandidateBest best;
  for (const auto& [key, s] : sym) {
    if (s == 0.0) continue;
    FeatureId i = static_cast<FeatureId>(key >> 32);
    FeatureId j = static_cast<FeatureId>(key & 0xffffffffu);
    double base = diag_at(i) + diag_at(j);
    best.consider(i, j, BasisSign::positive, lambda * (base + s));
    best.consider(i, j, BasisSign::negative, lambda * (base - s));
  }
  auto [d1, d2] = smallest_diagonal_pair(g.diag, dimension);
  if (d1 >= 0 && d2 >= 0) {
    auto it = sym.find(pack_pair(std::min(d1, d2), std::max(d1, d2)));
    double s = it == sym.end() ? 0.0 : it->second;
    double base = diag_at(d1) + diag_at(d2);
    best.consider(d1, d2, BasisSign::positive, lambda * (base + s));
    best.consider(d1, d2, BasisSign::negative, lambda * (base - s));
  }
  if (!best.found) return std::nullopt;
  return ForwardCandidate{best.basis, best.utility};
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

// (1/|batch|) sum over active batch constraints of c_t <A^t, B>.
inline double basis_utility(const BasisElement& b, const std::vector<double>& coeffs,
                            const ConstraintSet& cs, double lambda,
                            std::span<const std::size_t> batch) {
  double s = 0.0;
  for (std::size_t t : batch) {
    double c = coeffs[t];
    if (c == 0.0) continue;
    s += c * basis_factor(b, cs.x_of(t)) * basis_factor(b, cs.diff_of(t));
  }
  return batch.empty() ? 0.0 : lambda * s / static_cast<double>(batch.size());
}

inline double basis_utility(const BasisElement& b, const std::vector<double>& coeffs,
                            const ConstraintSet& cs, double lambda) {
  auto idx = detail::all_indices(cs.size());
  return basis_utility(b, coeffs, cs, lambda, idx);
}

// Exact linear minimization over the full dictionary: accumulates the sparse
// gradient surrogate over supp(x_t) x supp(d_t) and scans the candidate set.
// Returns nullopt when the gradient estimate is identically zero.
inline std::optional<ForwardCandidate> find_forward_exact(const ConstraintSet& cs,
                                                          const std::vector<double>& coeffs,
                                                          double lambda,
                                                          std::size_t threads = 1) {
  auto idx = detail::all_indices(cs.size());
  auto g = detail::build_surrogate(cs, coeffs, idx, threads);
  return detail::best_basis_from_surrogate(g, cs.dataset().dimension, lambda);
}

// Same search restricted to a uniform batch drawn without replacement. The
// batch indices stay in ascending order, so batch_size == T reproduces the
// exact search bit for bit without consuming the generator.
inline std::optional<ForwardCandidate> find_forward_minibatch(const ConstraintSet& cs,
                                                              const std::vector<double>& coeffs,
                                                              double lambda,
                                                              std::size_t batch_size,
                                                              std::mt19937_64& rng,
                                                              std::size_t threads = 1) {
  if (batch_size == 0 || batch_size > cs.size()) {
    throw std::invalid_argument("find_forward_minibatch: batch size must be in [1, T]");
  }
  std::vector<std::size_t> batch = batch_size == cs.size()
                                       ? detail::all_indices(cs.size())
                                       : sample_without_replacement(rng, cs.size(), batch_size);
  auto g = detail::build_surrogate(cs, coeffs, batch, threads);
  return detail::best_basis_from_surrogate(g, cs.dataset().dimension, lambda);
}

namespace detail {

// Linear problem over the pairs containing `fixed`: needs the diagonal, row
// `fixed` and column `fixed` of the batch gradient, all O(|batch| * D).
struct RestrictedScan {
  std::unordered_map<FeatureId, double> row_plus_col;  // G[fixed][j] + G[j][fixed]
  double fixed_diag = 0.0;
};

inline RestrictedScan scan_restricted(const ConstraintSet& cs, const std::vector<double>& coeffs,
                                      std::span<const std::size_t> batch, FeatureId fixed) {
  RestrictedScan r;
  for (std::size_t t : batch) {
    double c = coeffs[t];
    if (c == 0.0) continue;
    const auto& x = cs.x_of(t);
    const auto& d = cs.diff_of(t);
    double xf = x.value_at(fixed);
    if (xf != 0.0) {
      // row: G[fixed][j] terms (c * x_fixed) * d_j
      double cx = c * xf;
      for (const auto& [j, dv] : d.entries()) {
        if (j == fixed) {
          r.fixed_diag += cx * dv;
        } else {
          r.row_plus_col[j] += cx * dv;
        }
      }
    }
    double df = d.value_at(fixed);
    if (df != 0.0) {
      // column: G[j][fixed] terms (c * x_j) * d_fixed
      for (const auto& [j, xv] : x.entries()) {
        if (j != fixed) r.row_plus_col[j] += (c * xv) * df;
      }
    }
  }
  return r;
}

inline std::unordered_map<FeatureId, double> batch_diagonal(const ConstraintSet& cs,
                                                            const std::vector<double>& coeffs,
                                                            std::span<const std::size_t> batch) {
  std::unordered_map<FeatureId, double> diag;
  for (std::size_t t : batch) {
    double c = coeffs[t];
    if (c == 0.0) continue;
    const auto& xe = cs.x_of(t).entries();
    const auto& de = cs.diff_of(t).entries();
    std::size_t i = 0, j = 0;
    while (i < xe.size() && j < de.size()) {
      if (xe[i].first == de[j].first) {
        diag[xe[i].first] += (c * xe[i].second) * de[j].second;
        ++i;
        ++j;
      } else if (xe[i].first < de[j].first) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return diag;
}

// Best partner for `fixed` over the restricted dictionary slice.
inline CandidateBest best_partner(const ConstraintSet& cs, const std::vector<double>& coeffs,
                                  std::span<const std::size_t> batch, FeatureId fixed,
                                  const std::unordered_map<FeatureId, double>& diag,
                                  double lambda, double divisor) {
  RestrictedScan r = scan_restricted(cs, coeffs, batch, fixed);
  auto diag_at = [&](FeatureId f) {
    auto it = diag.find(f);
    return it == diag.end() ? 0.0 : it->second;
  };
  double base_fixed = diag_at(fixed);

  CandidateBest best;
  for (const auto& [j, s] : r.row_plus_col) {
    if (s == 0.0) continue;
    double base = (base_fixed + diag_at(j)) / divisor;
    best.consider(fixed, j, BasisSign::positive, lambda * (base + s / divisor));
    best.consider(fixed, j, BasisSign::negative, lambda * (base - s / divisor));
  }
  // partner with the smallest diagonal, counting unseen features as 0; the
  // pair search already skips `fixed`, so take whichever of the two best
  // diagonal features remains
  auto [d1, d2] = smallest_diagonal_pair(diag, cs.dataset().dimension);
  FeatureId partner = d1 == fixed ? d2 : d1;
  if (partner >= 0 && partner != fixed) {
    auto it = r.row_plus_col.find(partner);
    double s = it == r.row_plus_col.end() ? 0.0 : it->second;
    double base = (base_fixed + diag_at(partner)) / divisor;
    best.consider(fixed, partner, BasisSign::positive, lambda * (base + s / divisor));
    best.consider(fixed, partner, BasisSign::negative, lambda * (base - s / divisor));
  }
  return best;
}

}  // namespace detail

// Fast two-stage search: draw a feature i from the batch support, find its
// best partner j over the restricted set, then re-optimize the first feature
// with j fixed. The second stage re-evaluates the stage-1 pair, so the result
// is never worse than the stage-1 optimum.
inline std::optional<ForwardCandidate> find_forward_heuristic(const ConstraintSet& cs,
                                                              const std::vector<double>& coeffs,
                                                              double lambda,
                                                              std::span<const std::size_t> batch,
                                                              std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("find_forward_heuristic: empty batch");
  std::vector<FeatureId> support;
  for (std::size_t t : batch) {
    if (coeffs[t] == 0.0) continue;
    for (const auto& [f, v] : cs.x_of(t).entries()) support.push_back(f);
    for (const auto& [f, v] : cs.diff_of(t).entries()) support.push_back(f);
  }
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  if (support.empty()) return std::nullopt;  // zero batch gradient

  double divisor = static_cast<double>(batch.size());
  auto diag = detail::batch_diagonal(cs, coeffs, batch);

  FeatureId first = support[uniform_index(rng, support.size())];
  detail::CandidateBest stage1 = detail::best_partner(cs, coeffs, batch, first, diag, lambda, divisor);
  if (!stage1.found) return std::nullopt;

  FeatureId second = stage1.basis.i == first ? stage1.basis.j : stage1.basis.i;
  detail::CandidateBest stage2 =
      detail::best_partner(cs, coeffs, batch, second, diag, lambda, divisor);
  if (!stage2.found || stage1.utility < stage2.utility) {
    return ForwardCandidate{stage1.basis, stage1.utility};
  }
  return ForwardCandidate{stage2.basis, stage2.utility};
}

struct AwayCandidate {
  BasisElement basis;
  double utility = 0.0;      // <B_A, grad estimate>
  double model_inner = 0.0;  // <M, grad estimate> = sum_B alpha_B <B, grad>
};

// argmax over the active set of <B, grad estimate>; O(|batch| * k).
inline std::optional<AwayCandidate> find_away(const SimilarityModel& model,
                                              const std::vector<double>& coeffs,
                                              const ConstraintSet& cs,
                                              std::span<const std::size_t> batch) {
  std::optional<AwayCandidate> best;
  double model_inner = 0.0;
  for (const auto& [b, w] : model.atoms()) {
    double u = basis_utility(b, coeffs, cs, model.lambda(), batch);
    model_inner += w * u;
    if (!best || u > best->utility) {
      best = AwayCandidate{b, u, 0.0};
    }
  }
  if (best) best->model_inner = model_inner;
  return best;
}

inline std::optional<AwayCandidate> find_away(const SimilarityModel& model,
                                              const std::vector<double>& coeffs,
                                              const ConstraintSet& cs) {
  auto idx = detail::all_indices(cs.size());
  return find_away(model, coeffs, cs, idx);
}

// Standard conditional-gradient gap <M - B_F, grad f>; requires the forward
// utility from the exact search. Nonnegative, upper-bounds f(M) - f(M*).
inline double duality_gap(const SimilarityModel& model, const std::vector<double>& coeffs,
                          const ConstraintSet& cs, double forward_utility) {
  auto idx = detail::all_indices(cs.size());
  double model_inner = 0.0;
  for (const auto& [b, w] : model.atoms()) {
    model_inner += w * basis_utility(b, coeffs, cs, model.lambda(), idx);
  }
  return model_inner - forward_utility;
}

// Bisection on g(gamma) = (1/T) sum l'(m_t + gamma*d_t) * d_t, the derivative
// of the 1-d objective along the direction; g is nondecreasing because f is
// convex. The returned step never increases the objective: the lower bracket
// always satisfies g < 0, and a midpoint is only accepted once its objective
// value is no worse than at gamma = 0.
inline double line_search(const MarginCache& cache, const std::vector<double>& dir_inner,
                          double gamma_max, double eps) {
  if (!(gamma_max > 0.0)) throw std::invalid_argument("line_search: gamma_max must be positive");
  const auto& m = cache.margins;
  const double T = static_cast<double>(m.size());
  auto slope = [&](double gamma) {
    double s = 0.0;
    for (std::size_t t = 0; t < m.size(); ++t) {
      s += smoothed_hinge_deriv(m[t] + gamma * dir_inner[t]) * dir_inner[t];
    }
    return s / T;
  };
  auto value = [&](double gamma) {
    double s = 0.0;
    for (std::size_t t = 0; t < m.size(); ++t) {
      s += smoothed_hinge(m[t] + gamma * dir_inner[t]);
    }
    return s / T;
  };

  if (slope(0.0) >= 0.0) return 0.0;
  if (slope(gamma_max) <= 0.0) return gamma_max;

  const double f0 = value(0.0);
  double lo = 0.0, hi = gamma_max;
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    double g = slope(mid);
    if (std::abs(g) <= eps && value(mid) <= f0) return mid;
    if (g < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-16 * gamma_max) break;
  }
  return lo;
}

enum class StepType { forward, away };

struct Direction {
  StepType type = StepType::forward;
  BasisElement basis;
  std::vector<double> basis_inner;  // <A^t, B> for every constraint
  double gamma_max = 1.0;
};

// Convex-combination update of both the atom weights and the margin cache.
// Forward: alpha <- (1-gamma)*alpha, alpha_B += gamma. Away: alpha <-
// (1+gamma)*alpha, alpha_B -= gamma (gamma_max = alpha/(1-alpha) hits zero).
// Atoms falling below drop_tol are removed with their margin contribution
// subtracted exactly, and the weight sum is renormalized to 1.
inline void apply_step(SimilarityModel& model, MarginCache& cache, const ConstraintSet& cs,
                       const Direction& dir, double gamma, double drop_tol) {
  if (gamma < 0.0 || gamma > dir.gamma_max * (1.0 + 1e-12)) {
    throw std::logic_error("apply_step: step size outside [0, gamma_max]");
  }
  auto& m = cache.margins;
  const auto& bv = dir.basis_inner;
  if (dir.type == StepType::forward) {
    model.scale_weights(1.0 - gamma);
    model.add_weight(dir.basis, gamma);
    for (std::size_t t = 0; t < m.size(); ++t) m[t] = (1.0 - gamma) * m[t] + gamma * bv[t];
  } else {
    double w = model.weight_of(dir.basis);
    if (w <= 0.0) throw std::logic_error("apply_step: away atom not active");
    double w_new = (1.0 + gamma) * w - gamma;
    model.scale_weights(1.0 + gamma);
    model.set_weight(dir.basis, w_new);
    for (std::size_t t = 0; t < m.size(); ++t) m[t] = (1.0 + gamma) * m[t] - gamma * bv[t];
    if (w_new < 0.0) {
      // the atom was erased with a small negative residue; put that mass back
      // into the margins so they track the represented matrix exactly
      for (std::size_t t = 0; t < m.size(); ++t) m[t] -= w_new * bv[t];
    }
  }

  auto dropped = model.drop_small_atoms(drop_tol);
  for (const auto& [b, w] : dropped) {
    for (std::size_t t = 0; t < m.size(); ++t) {
      m[t] -= w * constraint_basis_inner(cs, t, b, model.lambda());
    }
  }
  double s = model.weight_sum();
  if (s <= 0.0) throw std::logic_error("apply_step: model lost all atoms");
  if (s != 1.0) {
    model.scale_weights(1.0 / s);
    for (double& mt : m) mt /= s;
  }
}

inline void rebuild_cache(MarginCache& cache, const ConstraintSet& cs,
                          const SimilarityModel& model, double* max_drift = nullptr) {
  for (std::size_t t = 0; t < cache.margins.size(); ++t) {
    double exact = constraint_model_inner(cs, t, model);
    if (max_drift != nullptr) {
      *max_drift = std::max(*max_drift, std::abs(exact - cache.margins[t]));
    }
    cache.margins[t] = exact;
  }
}

struct IterationLog {
  std::size_t iteration = 0;
  double objective = 0.0;
  std::optional<double> gap;
  std::size_t n_atoms = 0;
  std::size_t n_features = 0;
  char step_type = 'F';
  double gamma = 0.0;
};

struct ModelSnapshot {
  std::size_t iteration = 0;
  SimilarityModel model;
};

struct BestSnapshot {
  SimilarityModel model;
  double validation_error = 0.0;
  std::size_t iteration = 0;
};

struct TrainerState {
  SimilarityModel model;
  MarginCache cache;
  std::size_t iterations_run = 0;
  bool converged = false;
  double lipschitz = 0.0;
  std::vector<double> objective_history;  // objective_history[k] = f(M^(k))
  std::vector<double> gap_history;        // exact strategy only
  std::optional<BestSnapshot> best;
  std::vector<IterationLog> log;
  std::vector<ModelSnapshot> snapshots;
  double max_cache_drift = 0.0;
};

using ValidationFn = std::function<double(const SimilarityModel&)>;

namespace detail {

inline void check_structural_bounds(const SimilarityModel& model, std::size_t k) {
  StructureStats st = structure_stats(model);
  std::size_t budget = k + 1;
  if (st.n_atoms > budget || st.active_features > 2 * budget || st.nnz_entries > 4 * budget) {
    throw std::logic_error("structural bound violated at iteration " + std::to_string(k) + ": " +
                           std::to_string(st.n_atoms) + " atoms, " +
                           std::to_string(st.active_features) + " features, " +
                           std::to_string(st.nnz_entries) + " nonzeros");
  }
}

}  // namespace detail

// Frank-Wolfe with away steps over the signed pair dictionary. M^(0) is the
// basis found by the forward search at M = 0 (margins all zero), which is
// deterministic for a given seed. Stops on the duality gap under the exact
// strategy, otherwise after max_iterations. When a validation callback is
// given it is invoked every validation_every iterations (and at the end) and
// the best-scoring model is kept.
inline TrainerState train(const OptimizerConfig& config, const ConstraintSet& cs,
                          const ValidationFn& validation = {}) {
  if (cs.empty()) throw std::invalid_argument("train: no constraints");
  if (cs.dataset().dimension < 2) {
    throw std::invalid_argument("train: need at least two features");
  }
  if (!(config.lambda > 0.0)) throw std::invalid_argument("train: lambda must be positive");
  const std::size_t T = cs.size();
  const std::size_t batch_size =
      config.strategy == ForwardStrategy::exact ? T : std::min(std::max<std::size_t>(config.minibatch_size, 1), T);

  std::mt19937_64 rng(config.seed);
  TrainerState state;
  state.lipschitz = cs.lipschitz_constant();
  state.cache.margins.assign(T, 0.0);

  auto forward_at = [&](const std::vector<double>& coeffs) -> std::optional<ForwardCandidate> {
    switch (config.strategy) {
      case ForwardStrategy::exact:
        return find_forward_exact(cs, coeffs, config.lambda, config.threads);
      case ForwardStrategy::minibatch:
        return find_forward_minibatch(cs, coeffs, config.lambda, batch_size, rng, config.threads);
      case ForwardStrategy::heuristic: {
        std::vector<std::size_t> batch = batch_size == T
                                             ? detail::all_indices(T)
                                             : sample_without_replacement(rng, T, batch_size);
        return find_forward_heuristic(cs, coeffs, config.lambda, batch, rng);
      }
    }
    throw std::logic_error("unreachable");
  };

  // batch for the away scan and the forward/away comparison; approximate
  // strategies reuse the sampled batch of the same iteration
  std::vector<std::size_t> full = detail::all_indices(T);

  // initialize at the forward basis of the zero matrix
  {
    std::vector<double> coeffs(T, -1.0);
    auto init = forward_at(coeffs);
    if (!init) throw std::runtime_error("train: zero gradient at initialization");
    state.model = SimilarityModel(config.lambda);
    state.model.add_weight(init->basis, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
      state.cache.margins[t] = constraint_basis_inner(cs, t, init->basis, config.lambda);
    }
  }
  state.objective_history.push_back(objective(state.cache));
  if (config.check_structural_bounds) detail::check_structural_bounds(state.model, 0);

  auto evaluate_validation = [&](std::size_t k) {
    if (!validation) return;
    double err = validation(state.model);
    if (!state.best || err < state.best->validation_error) {
      state.best = BestSnapshot{state.model, err, k};
    }
  };

  std::size_t since_rebuild = 0;
  for (std::size_t k = 0; k < config.max_iterations; ++k) {
    std::vector<double> coeffs = gradient_coefficients(state.cache);

    std::optional<ForwardCandidate> fwd;
    std::vector<std::size_t> batch;
    if (config.strategy == ForwardStrategy::exact) {
      fwd = find_forward_exact(cs, coeffs, config.lambda, config.threads);
    } else if (config.strategy == ForwardStrategy::minibatch) {
      batch = batch_size == T ? full : sample_without_replacement(rng, T, batch_size);
      auto g = detail::build_surrogate(cs, coeffs, batch, config.threads);
      fwd = detail::best_basis_from_surrogate(g, cs.dataset().dimension, config.lambda);
    } else {
      batch = batch_size == T ? full : sample_without_replacement(rng, T, batch_size);
      fwd = find_forward_heuristic(cs, coeffs, config.lambda, batch, rng);
    }
    if (!fwd && config.strategy != ForwardStrategy::exact) {
      // the sampled batch had no active constraint; consult the full gradient
      // before concluding anything
      fwd = find_forward_exact(cs, coeffs, config.lambda, config.threads);
    }
    if (!fwd) {
      // no active constraint anywhere: f is flat and minimal
      state.converged = true;
      break;
    }

    std::span<const std::size_t> view =
        config.strategy == ForwardStrategy::exact ? std::span<const std::size_t>(full)
                                                  : std::span<const std::size_t>(batch);
    auto away = find_away(state.model, coeffs, cs, view);

    if (config.strategy == ForwardStrategy::exact) {
      double gap = away->model_inner - fwd->utility;
      state.gap_history.push_back(gap);
      if (gap <= config.gap_tolerance) {
        state.converged = true;
        break;
      }
    }

    // Algorithm choice: forward step unless the away direction has a strictly
    // more negative linearized decrease; single-atom models always go forward
    // (the away direction is zero there).
    double forward_term = fwd->utility - away->model_inner;
    double away_term = away->model_inner - away->utility;
    bool go_forward = state.model.n_atoms() <= 1 || forward_term <= away_term;

    Direction dir;
    dir.type = go_forward ? StepType::forward : StepType::away;
    dir.basis = go_forward ? fwd->basis : away->basis;
    if (go_forward) {
      dir.gamma_max = 1.0;
    } else {
      double alpha = state.model.weight_of(dir.basis);
      dir.gamma_max = alpha / (1.0 - alpha);
    }
    dir.basis_inner.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      dir.basis_inner[t] = constraint_basis_inner(cs, t, dir.basis, config.lambda);
    }
    std::vector<double> dir_inner(T);
    if (go_forward) {
      for (std::size_t t = 0; t < T; ++t) dir_inner[t] = dir.basis_inner[t] - state.cache.margins[t];
    } else {
      for (std::size_t t = 0; t < T; ++t) dir_inner[t] = state.cache.margins[t] - dir.basis_inner[t];
    }

    double gamma = line_search(state.cache, dir_inner, dir.gamma_max, config.line_search_tol);
    apply_step(state.model, state.cache, cs, dir, gamma, config.drop_tol);

    if (++since_rebuild >= config.cache_rebuild_every) {
      rebuild_cache(state.cache, cs, state.model, &state.max_cache_drift);
      since_rebuild = 0;
    }

    double f = objective(state.cache);
    if (f > state.objective_history.back() + 1e-9) {
      throw std::logic_error("objective increased at iteration " + std::to_string(k));
    }
    state.objective_history.push_back(f);
    state.iterations_run = k + 1;
    if (config.check_structural_bounds) detail::check_structural_bounds(state.model, k + 1);

    StructureStats st = structure_stats(state.model);
    IterationLog row;
    row.iteration = k + 1;
    row.objective = f;
    if (!state.gap_history.empty() && config.strategy == ForwardStrategy::exact) {
      row.gap = state.gap_history.back();
    }
    row.n_atoms = st.n_atoms;
    row.n_features = st.active_features;
    row.step_type = go_forward ? 'F' : 'A';
    row.gamma = gamma;
    state.log.push_back(row);

    if ((k + 1) % config.validation_every == 0) {
      evaluate_validation(k + 1);
      if (config.keep_snapshots) {
        state.snapshots.push_back({k + 1, state.model});
      }
    }
  }

  evaluate_validation(state.iterations_run);
  if (config.keep_snapshots &&
      (state.snapshots.empty() || state.snapshots.back().iteration != state.iterations_run)) {
    state.snapshots.push_back({state.iterations_run, state.model});
  }
  return state;
}

}  // namespace hdsl
