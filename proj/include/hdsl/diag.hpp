#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdsl/constraints.hpp"
#include "hdsl/io_util.hpp"
#include "hdsl/loss.hpp"

namespace hdsl {

enum class DiagRegularizer { l1, l2 };

// Feature-weighting similarity S(x, x') = sum_f w_f x_f x'_f, i.e. M = diag(w).
struct DiagModel {
  std::vector<double> weights;
  DiagRegularizer regularizer = DiagRegularizer::l2;
  double reg_weight = 0.0;

  std::size_t nnz() const {
    std::size_t n = 0;
    for (double w : weights) n += w != 0.0;
    return n;
  }
};

// <A^t, diag(w)> = sum_f w_f x_f d_f over the support intersection.
inline double diag_margin(const SparseVector& x, const SparseVector& d,
                          const std::vector<double>& w) {
  const auto& xe = x.entries();
  const auto& de = d.entries();
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < xe.size() && j < de.size()) {
    if (xe[i].first == de[j].first) {
      FeatureId f = xe[i].first;
      double wf = static_cast<std::size_t>(f) < w.size() ? w[f] : 0.0;
      s += wf * xe[i].second * de[j].second;
      ++i;
      ++j;
    } else if (xe[i].first < de[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

inline double diag_margin(const ConstraintSet& cs, std::size_t t, const std::vector<double>& w) {
  return diag_margin(cs.x_of(t), cs.diff_of(t), w);
}

// Entrywise soft-thresholding: the exact proximal map of threshold * |.|.
inline void prox_l1_inplace(std::vector<double>& w, double threshold) {
  if (threshold < 0.0) throw std::invalid_argument("prox_l1: negative threshold");
  if (threshold == 0.0) return;
  for (double& v : w) {
    if (v > threshold) {
      v -= threshold;
    } else if (v < -threshold) {
      v += threshold;
    } else {
      v = 0.0;
    }
  }
}

inline std::vector<double> prox_l1(std::vector<double> w, double threshold) {
  prox_l1_inplace(w, threshold);
  return w;
}

struct DiagConfig {
  DiagRegularizer regularizer = DiagRegularizer::l2;
  double reg_weight = 0.0;
  std::size_t max_iterations = 500;
  double initial_step = 1.0;
  double tolerance = 1e-10;  // relative objective change
  std::size_t validation_every = 50;
};

struct DiagBest {
  DiagModel model;
  double validation_error = 0.0;
  std::size_t iteration = 0;
};

struct DiagTrainResult {
  DiagModel model;
  std::vector<double> objective_history;
  std::optional<DiagBest> best;
  std::size_t iterations_run = 0;
};

using DiagValidationFn = std::function<double(const DiagModel&)>;

// Proximal gradient descent on (1/T) sum l(<A^t, diag(w)>) + reg_weight * Omega(w)
// with Omega = ||w||_2^2 (plain gradient, includes 2*reg_weight*w) or ||w||_1
// (gradient step on the loss, then soft-thresholding). The step size backtracks
// until the quadratic upper bound holds, which makes the objective
// non-increasing. Starts from w = 1 (the identity weighting).
inline DiagTrainResult train_diag(const ConstraintSet& cs, const DiagConfig& config,
                                  const DiagValidationFn& validation = {}) {
  if (cs.empty()) throw std::invalid_argument("train_diag: no constraints");
  if (config.reg_weight < 0.0) throw std::invalid_argument("train_diag: negative reg weight");
  const std::size_t T = cs.size();
  const std::size_t d = static_cast<std::size_t>(cs.dataset().dimension);

  // per-constraint elementwise products x_t .* d_t: margins become dot(w, p_t)
  std::vector<SparseVector> products;
  products.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<SparseVector::Entry> entries;
    const auto& xe = cs.x_of(t).entries();
    const auto& de = cs.diff_of(t).entries();
    std::size_t i = 0, j = 0;
    while (i < xe.size() && j < de.size()) {
      if (xe[i].first == de[j].first) {
        double v = xe[i].second * de[j].second;
        if (v != 0.0) entries.emplace_back(xe[i].first, v);
        ++i;
        ++j;
      } else if (xe[i].first < de[j].first) {
        ++i;
      } else {
        ++j;
      }
    }
    products.emplace_back(std::move(entries));
  }

  auto loss_of = [&](const std::vector<double>& w) {
    double s = 0.0;
    for (const auto& p : products) {
      double margin = 0.0;
      for (const auto& [f, v] : p.entries()) margin += w[f] * v;
      s += smoothed_hinge(margin);
    }
    return s / static_cast<double>(T);
  };
  auto reg_of = [&](const std::vector<double>& w) {
    double s = 0.0;
    if (config.regularizer == DiagRegularizer::l2) {
      for (double v : w) s += v * v;
    } else {
      for (double v : w) s += std::abs(v);
    }
    return config.reg_weight * s;
  };
  auto loss_gradient = [&](const std::vector<double>& w, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& p : products) {
      double margin = 0.0;
      for (const auto& [f, v] : p.entries()) margin += w[f] * v;
      double c = smoothed_hinge_deriv(margin);
      if (c == 0.0) continue;
      for (const auto& [f, v] : p.entries()) grad[f] += c * v;
    }
    for (double& g : grad) g /= static_cast<double>(T);
  };

  DiagTrainResult result;
  result.model.regularizer = config.regularizer;
  result.model.reg_weight = config.reg_weight;
  std::vector<double> w(d, 1.0);
  std::vector<double> grad(d, 0.0);

  double objective = loss_of(w) + reg_of(w);
  result.objective_history.push_back(objective);

  auto evaluate_validation = [&](std::size_t k) {
    if (!validation) return;
    result.model.weights = w;
    double err = validation(result.model);
    if (!result.best || err < result.best->validation_error) {
      result.best = DiagBest{result.model, err, k};
    }
  };

  double step = config.initial_step;
  std::vector<double> w_next(d, 0.0);
  for (std::size_t k = 0; k < config.max_iterations; ++k) {
    double smooth_value;  // value of the smooth part at w
    if (config.regularizer == DiagRegularizer::l2) {
      loss_gradient(w, grad);
      for (std::size_t f = 0; f < d; ++f) grad[f] += 2.0 * config.reg_weight * w[f];
      smooth_value = objective;  // whole objective is smooth
    } else {
      loss_gradient(w, grad);
      smooth_value = objective - reg_of(w);
    }

    double next_objective = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt) {
      for (std::size_t f = 0; f < d; ++f) w_next[f] = w[f] - step * grad[f];
      if (config.regularizer == DiagRegularizer::l1) {
        prox_l1_inplace(w_next, step * config.reg_weight);
      }
      // quadratic upper bound at w for the smooth part
      double lin = 0.0, sq = 0.0;
      for (std::size_t f = 0; f < d; ++f) {
        double delta = w_next[f] - w[f];
        lin += grad[f] * delta;
        sq += delta * delta;
      }
      double smooth_next = config.regularizer == DiagRegularizer::l2
                               ? loss_of(w_next) + reg_of(w_next)
                               : loss_of(w_next);
      if (std::isnan(smooth_next)) throw std::runtime_error("train_diag: objective diverged");
      if (smooth_next <= smooth_value + lin + sq / (2.0 * step) + 1e-15) {
        next_objective = config.regularizer == DiagRegularizer::l2 ? smooth_next
                                                                   : smooth_next + reg_of(w_next);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflowed; w is numerically stationary

    std::swap(w, w_next);
    result.iterations_run = k + 1;
    double previous = objective;
    objective = next_objective;
    result.objective_history.push_back(objective);
    if (std::isnan(objective)) throw std::runtime_error("train_diag: objective diverged");

    if ((k + 1) % config.validation_every == 0) evaluate_validation(k + 1);
    step *= 1.25;

    if (previous - objective <= config.tolerance * (1.0 + std::abs(previous))) break;
  }

  result.model.weights = w;
  evaluate_validation(result.iterations_run);
  return result;
}

inline void save_diag(const DiagModel& m, std::ostream& out) {
  out << "diag 1 reg=" << (m.regularizer == DiagRegularizer::l1 ? "l1" : "l2")
      << " λ=" << format_double(m.reg_weight) << '\n';
  for (std::size_t f = 0; f < m.weights.size(); ++f) {
    if (m.weights[f] != 0.0) {
      out << f << ' ' << format_double(m.weights[f]) << '\n';
    }
  }
}

inline DiagModel load_diag(std::istream& in, std::size_t dimension = 0) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("diag model: empty input");
  auto head = split_ws(header);
  if (head.size() != 4 || head[0] != "diag" || head[1] != "1") {
    throw FormatError("diag model: bad header '" + header + "'");
  }
  DiagModel m;
  if (head[2] == "reg=l1") {
    m.regularizer = DiagRegularizer::l1;
  } else if (head[2] == "reg=l2") {
    m.regularizer = DiagRegularizer::l2;
  } else {
    throw FormatError("diag model: bad regularizer field");
  }
  std::string_view lam_tok = head[3];
  std::string_view lam_key = "λ=";
  if (lam_tok.substr(0, lam_key.size()) != lam_key ||
      !parse_double(lam_tok.substr(lam_key.size()), m.reg_weight) || m.reg_weight < 0.0) {
    throw FormatError("diag model: bad regularization weight");
  }

  std::vector<std::pair<std::size_t, double>> entries;
  std::string line;
  std::size_t max_f = 0;
  while (std::getline(in, line)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    long long f = 0;
    double v = 0.0;
    if (tok.size() != 2 || !parse_long(tok[0], f) || f < 0 || !parse_double(tok[1], v)) {
      throw FormatError("diag model: bad weight line '" + line + "'");
    }
    if (!std::isfinite(v)) throw FormatError("diag model: non-finite weight");
    entries.emplace_back(static_cast<std::size_t>(f), v);
    max_f = std::max(max_f, static_cast<std::size_t>(f));
  }
  m.weights.assign(std::max(dimension, entries.empty() ? std::size_t{0} : max_f + 1), 0.0);
  for (auto [f, v] : entries) m.weights[f] = v;
  return m;
}

}  // namespace hdsl
