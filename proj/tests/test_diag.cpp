#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "hdsl/diag.hpp"
#include "oracles.hpp"

using namespace hdsl;

namespace {

Dataset separable_blocks() {
  // class 0 lives on features {0,1}, class 1 on {2,3}: a diagonal similarity
  // can satisfy every triplet with margin >= 1
  Dataset ds;
  ds.dimension = 4;
  auto add = [&](std::vector<SparseVector::Entry> e, int label) {
    ds.instances.emplace_back(std::move(e));
    ds.labels.push_back(label);
  };
  add({{0, 1.0}, {1, 0.8}}, 0);
  add({{0, 0.9}, {1, 1.0}}, 0);
  add({{0, 0.8}, {1, 0.9}}, 0);
  add({{2, 1.0}, {3, 0.8}}, 1);
  add({{2, 0.9}, {3, 1.0}}, 1);
  add({{2, 0.8}, {3, 0.9}}, 1);
  return ds;
}

}  // namespace

TEST_CASE("diag margin with unit weights equals the identity margin") {
  std::mt19937_64 rng(201);
  Dataset ds = oracle::random_dataset(rng, 20, 12, 2, 6);
  ds.labels = {0, 0, 0, 1, 1, 1, 0, 1, 0, 1, 0, 1};
  ConstraintSet cs = build_triplets_random(ds, 4, 17);
  std::vector<double> ones(20, 1.0);
  for (std::size_t t = 0; t < cs.size(); ++t) {
    // bitwise equal to the diff-vector identity route
    CHECK(diag_margin(cs, t, ones) == sparse_dot(cs.x_of(t), cs.diff_of(t)));
    // and within rounding of the two-dot-product route
    CHECK_THAT(diag_margin(cs, t, ones),
               Catch::Matchers::WithinAbs(identity_margin(cs, t), 1e-12));
  }
}

TEST_CASE("diag margin: disjoint supports and dense oracle") {
  SparseVector x({{0, 1.0}, {2, 2.0}});
  SparseVector d({{1, 5.0}, {3, 1.0}});
  std::vector<double> w(4, 3.0);
  CHECK(diag_margin(x, d, w) == 0.0);

  std::mt19937_64 rng(211);
  for (int trial = 0; trial < 30; ++trial) {
    const int dim = 15;
    auto a = oracle::random_sparse(rng, dim, 7);
    auto b = oracle::random_sparse(rng, dim, 7, false);
    std::vector<double> weights(dim);
    std::uniform_real_distribution<double> wdist(-2.0, 2.0);
    for (auto& v : weights) v = wdist(rng);
    Eigen::VectorXd dx = oracle::dense_vector(a, dim);
    Eigen::VectorXd dd = oracle::dense_vector(b, dim);
    double expected = dx.cwiseProduct(dd).dot(Eigen::Map<Eigen::VectorXd>(weights.data(), dim));
    CHECK_THAT(diag_margin(a, b, weights), Catch::Matchers::WithinAbs(expected, 1e-12));
  }
}

TEST_CASE("prox_l1 soft-thresholds entrywise") {
  CHECK(prox_l1({0.5}, 0.2)[0] == Catch::Approx(0.3));
  CHECK(prox_l1({-0.1}, 0.2)[0] == 0.0);
  std::vector<double> w{0.4, -0.9, 0.0};
  CHECK(prox_l1(w, 0.0) == w);
  CHECK_THROWS_AS(prox_l1(w, -1.0), std::invalid_argument);
}

TEST_CASE("prox_l1 minimizes the per-coordinate proximal objective") {
  std::mt19937_64 rng(221);
  std::uniform_real_distribution<double> wdist(-3.0, 3.0);
  std::uniform_real_distribution<double> tdist(0.0, 2.0);
  for (int trial = 0; trial < 40; ++trial) {
    double w = wdist(rng);
    double threshold = tdist(rng);
    double proxed = prox_l1({w}, threshold)[0];
    auto objective = [&](double u) { return 0.5 * (u - w) * (u - w) + threshold * std::abs(u); };
    // two-stage grid search around the argmin
    double best_u = -4.0;
    for (double u = -4.0; u <= 4.0; u += 1e-3) {
      if (objective(u) < objective(best_u)) best_u = u;
    }
    double fine_best = best_u;
    for (double u = best_u - 2e-3; u <= best_u + 2e-3; u += 1e-7) {
      if (objective(u) < objective(fine_best)) fine_best = u;
    }
    CHECK_THAT(proxed, Catch::Matchers::WithinAbs(fine_best, 1e-6));
  }
}

TEST_CASE("unregularized diag training drives a separable problem to zero loss") {
  Dataset ds = separable_blocks();
  ConstraintSet cs = build_triplets_knn(ds, 2, 2);
  DiagConfig config;
  config.reg_weight = 0.0;
  config.max_iterations = 3000;
  config.tolerance = 0.0;
  DiagTrainResult result = train_diag(cs, config);
  CHECK(result.objective_history.back() <= 1e-6);
}

TEST_CASE("strong l1 regularization zeroes the weights") {
  Dataset ds = separable_blocks();
  ConstraintSet cs = build_triplets_knn(ds, 1, 1);
  DiagConfig config;
  config.regularizer = DiagRegularizer::l1;
  config.reg_weight = 1e4;
  config.max_iterations = 50;
  DiagTrainResult result = train_diag(cs, config);
  CHECK(result.model.nnz() == 0);
}

TEST_CASE("diag objective is non-increasing under backtracking") {
  std::mt19937_64 rng(231);
  Dataset ds = oracle::random_dataset(rng, 25, 20, 2, 6);
  ds.labels[0] = 0;
  ds.labels[1] = 0;
  ds.labels[2] = 1;
  ds.labels[3] = 1;
  ConstraintSet cs = build_triplets_random(ds, 5, 3);
  for (auto reg : {DiagRegularizer::l2, DiagRegularizer::l1}) {
    DiagConfig config;
    config.regularizer = reg;
    config.reg_weight = 1e-3;
    config.max_iterations = 200;
    config.tolerance = 0.0;
    DiagTrainResult result = train_diag(cs, config);
    for (std::size_t k = 1; k < result.objective_history.size(); ++k) {
      CHECK(result.objective_history[k] <= result.objective_history[k - 1] + 1e-12);
    }
  }
}

TEST_CASE("diag validation callback keeps the best iterate") {
  Dataset ds = separable_blocks();
  ConstraintSet cs = build_triplets_knn(ds, 2, 2);
  DiagConfig config;
  config.reg_weight = 1e-4;
  config.max_iterations = 60;
  config.validation_every = 20;
  std::vector<double> seen;
  DiagValidationFn fake = [&](const DiagModel&) {
    double v = 50.0 - static_cast<double>(seen.size());
    seen.push_back(v);
    return v;
  };
  DiagTrainResult result = train_diag(cs, config, fake);
  REQUIRE(result.best.has_value());
  CHECK(result.best->validation_error == seen.back());
}

TEST_CASE("diag model save/load round-trip") {
  DiagModel m;
  m.regularizer = DiagRegularizer::l1;
  m.reg_weight = 0.125;
  m.weights = {0.0, 1.5, 0.0, -2.25, 1e-9};
  std::ostringstream out;
  save_diag(m, out);
  std::istringstream in(out.str());
  DiagModel loaded = load_diag(in, m.weights.size());
  CHECK(loaded.regularizer == m.regularizer);
  CHECK(loaded.reg_weight == m.reg_weight);
  CHECK(loaded.weights == m.weights);

  std::istringstream bad_header("diag 2 reg=l1 λ=1\n");
  CHECK_THROWS_AS(load_diag(bad_header), FormatError);
  std::istringstream bad_reg("diag 1 reg=linf λ=1\n0 1.0\n");
  CHECK_THROWS_AS(load_diag(bad_reg), FormatError);
  std::istringstream bad_line("diag 1 reg=l2 λ=1\n0 x\n");
  CHECK_THROWS_AS(load_diag(bad_line), FormatError);
}
