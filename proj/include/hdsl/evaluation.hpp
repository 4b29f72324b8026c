#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "hdsl/dataset.hpp"
#include "hdsl/diag.hpp"
#include "hdsl/optimizer.hpp"
#include "hdsl/similarity_model.hpp"

namespace hdsl {

using PairScorer = std::function<double(const SparseVector&, const SparseVector&)>;

inline PairScorer identity_scorer() {
  return [](const SparseVector& a, const SparseVector& b) { return sparse_dot(a, b); };
}

// Scores atom by atom. The model must outlive the scorer.
inline PairScorer model_scorer(const SimilarityModel& m) {
  return [&m](const SparseVector& a, const SparseVector& b) { return score(m, a, b); };
}

inline PairScorer diag_scorer(const DiagModel& m) {
  return [&m](const SparseVector& a, const SparseVector& b) {
    const auto& xe = a.entries();
    const auto& ye = b.entries();
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < xe.size() && j < ye.size()) {
      if (xe[i].first == ye[j].first) {
        FeatureId f = xe[i].first;
        double wf = static_cast<std::size_t>(f) < m.weights.size() ? m.weights[f] : 0.0;
        s += wf * xe[i].second * ye[j].second;
        ++i;
        ++j;
      } else if (xe[i].first < ye[j].first) {
        ++i;
      } else {
        ++j;
      }
    }
    return s;
  };
}

namespace detail {

// Majority vote over the k highest-scoring training instances. Ties on score
// break toward the smaller instance index; ties on the vote break toward the
// larger summed similarity, then the smaller class id.
inline int classify_one(const std::vector<double>& scores, const std::vector<int>& labels,
                        std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t kk = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::map<int, std::pair<std::size_t, double>> votes;  // label -> (count, score sum)
  for (std::size_t r = 0; r < kk; ++r) {
    auto& v = votes[labels[order[r]]];
    v.first += 1;
    v.second += scores[order[r]];
  }
  int winner = 0;
  bool first = true;
  std::pair<std::size_t, double> best{0, 0.0};
  for (const auto& [label, v] : votes) {  // ascending label: keeps smaller id on full ties
    if (first || v.first > best.first || (v.first == best.first && v.second > best.second)) {
      winner = label;
      best = v;
      first = false;
    }
  }
  return winner;
}

template <typename ScoreFn>
inline std::vector<int> classify_all(std::size_t n_queries, std::size_t n_train,
                                     const std::vector<int>& labels, std::size_t k,
                                     std::size_t threads, const ScoreFn& score_pair) {
  std::vector<int> predictions(n_queries, 0);
  auto worker = [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scores(n_train);
    for (std::size_t q = lo; q < hi; ++q) {
      for (std::size_t m = 0; m < n_train; ++m) scores[m] = score_pair(q, m);
      predictions[q] = classify_one(scores, labels, k);
    }
  };
  if (threads <= 1 || n_queries < 2 * threads) {
    worker(0, n_queries);
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (n_queries + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
      std::size_t lo = w * chunk;
      std::size_t hi = std::min(n_queries, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return predictions;
}

}  // namespace detail

// Brute-force k-nearest-neighbor classification of the queries against the
// training set under an arbitrary pair scorer.
inline std::vector<int> knn_classify(const Dataset& train, const Dataset& queries,
                                     const PairScorer& scorer, std::size_t k,
                                     std::size_t threads = 1) {
  if (train.size() == 0) throw std::invalid_argument("knn_classify: empty training set");
  if (k < 1) throw std::invalid_argument("knn_classify: k must be >= 1");
  return detail::classify_all(queries.size(), train.size(), train.labels, k, threads,
                              [&](std::size_t q, std::size_t m) {
                                return scorer(queries.instances[q], train.instances[m]);
                              });
}

// Same classification through the model's embedding: instances are projected
// once and scored by dense dot products. Agrees with knn_classify under
// model_scorer up to embedding round-off.
inline std::vector<int> knn_classify_embedded(const Dataset& train, const Dataset& queries,
                                              const SimilarityModel& model, std::size_t k,
                                              std::size_t threads = 1) {
  if (train.size() == 0) throw std::invalid_argument("knn_classify: empty training set");
  if (k < 1) throw std::invalid_argument("knn_classify: k must be >= 1");
  std::vector<std::vector<double>> train_emb(train.size());
  for (std::size_t m = 0; m < train.size(); ++m) train_emb[m] = embed(model, train.instances[m]);
  std::vector<std::vector<double>> query_emb(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    query_emb[q] = embed(model, queries.instances[q]);
  }
  return detail::classify_all(queries.size(), train.size(), train.labels, k, threads,
                              [&](std::size_t q, std::size_t m) {
                                const auto& a = query_emb[q];
                                const auto& b = train_emb[m];
                                double s = 0.0;
                                for (std::size_t c = 0; c < a.size(); ++c) s += a[c] * b[c];
                                return s;
                              });
}

inline double error_rate(const std::vector<int>& predictions, const std::vector<int>& truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("error_rate: length mismatch");
  }
  if (predictions.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) wrong += predictions[i] != truth[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

struct CurvePoint {
  std::size_t iteration = 0;
  std::size_t dimension = 0;  // embedding dimension = number of atoms
  double validation_error = 0.0;
  double test_error = 0.0;
};

// One row per model snapshot: k-NN error as the embedding dimension grows
// along the run.
inline std::vector<CurvePoint> dimension_curve(const std::vector<ModelSnapshot>& snapshots,
                                               const Dataset& train, const Dataset& validation,
                                               const Dataset& test, std::size_t k,
                                               std::size_t threads = 1) {
  std::vector<CurvePoint> points;
  points.reserve(snapshots.size());
  for (const auto& snap : snapshots) {
    CurvePoint p;
    p.iteration = snap.iteration;
    p.dimension = snap.model.n_atoms();
    p.validation_error =
        error_rate(knn_classify_embedded(train, validation, snap.model, k, threads),
                   validation.labels);
    p.test_error =
        error_rate(knn_classify_embedded(train, test, snap.model, k, threads), test.labels);
    points.push_back(p);
  }
  return points;
}

inline void write_curve_csv(const std::vector<CurvePoint>& points, std::ostream& out) {
  out << "iteration,dimension,validation_error,test_error\n";
  for (const auto& p : points) {
    out << p.iteration << ',' << p.dimension << ',' << format_double(p.validation_error) << ','
        << format_double(p.test_error) << '\n';
  }
}

inline void write_predictions_csv(const std::vector<int>& predictions,
                                  const std::vector<int>& truth, std::ostream& out) {
  out << "query_id,predicted,true\n";
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out << i << ',' << predictions[i] << ',' << truth[i] << '\n';
  }
}

}  // namespace hdsl
