#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>
#include <sstream>

#include "hdsl/similarity_model.hpp"
#include "oracles.hpp"

using namespace hdsl;

TEST_CASE("basis elements canonicalize to i < j") {
  BasisElement b(5, 2, BasisSign::negative);
  CHECK(b.i == 2);
  CHECK(b.j == 5);
  CHECK_THROWS_AS(BasisElement(3, 3, BasisSign::positive), std::invalid_argument);
}

TEST_CASE("score expands the rank-one factors") {
  SimilarityModel m(1.0);
  m.add_weight(BasisElement(1, 2, BasisSign::positive), 1.0);
  SparseVector x({{1, 1.0}, {2, 1.0}});
  CHECK(score(m, x, x) == 4.0);

  SparseVector disjoint({{7, 3.0}});
  CHECK(score(m, disjoint, disjoint) == 0.0);
  CHECK(score(m, x, disjoint) == 0.0);
}

TEST_CASE("score matches the dense quadratic form on random models") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const int dim = 30;
    auto m = oracle::random_model(rng, dim, 6, 0.5 + (trial % 5));
    auto x = oracle::random_sparse(rng, dim, 10);
    auto y = oracle::random_sparse(rng, dim, 10);
    Eigen::MatrixXd dense = oracle::dense_model(m, dim);
    double expected =
        oracle::dense_vector(x, dim).transpose() * dense * oracle::dense_vector(y, dim);
    CHECK_THAT(score(m, x, y), Catch::Matchers::WithinAbs(expected, 1e-10));
    // symmetry of M
    CHECK_THAT(score(m, x, y), Catch::Matchers::WithinAbs(score(m, y, x), 1e-12));
  }
}

TEST_CASE("to_dense lays out the four-entry patterns") {
  SimilarityModel p(2.0);
  p.add_weight(BasisElement(0, 1, BasisSign::positive), 1.0);
  auto dense = to_dense(p, 3);
  CHECK(dense == std::vector<double>{2, 2, 0, 2, 2, 0, 0, 0, 0});

  SimilarityModel n(2.0);
  n.add_weight(BasisElement(0, 1, BasisSign::negative), 1.0);
  dense = to_dense(n, 3);
  CHECK(dense == std::vector<double>{2, -2, 0, -2, 2, 0, 0, 0, 0});

  CHECK_THROWS_AS(to_dense(p, 20000), std::invalid_argument);
  CHECK_NOTHROW(to_dense(p, 10001, true).size());
}

TEST_CASE("models are PSD by construction") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 25;
    auto m = oracle::random_model(rng, dim, 8, 1.0 + trial);
    auto flat = to_dense(m, dim);
    Eigen::Map<Eigen::MatrixXd> mat(flat.data(), dim, dim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mat);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    CHECK((mat - mat.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("embedding dot products reproduce the score") {
  SimilarityModel single(1.0);
  single.add_weight(BasisElement(1, 2, BasisSign::positive), 1.0);
  SparseVector e1({{1, 1.0}});
  auto coords = embed(single, e1);
  REQUIRE(coords.size() == 1);
  CHECK(coords[0] == 1.0);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int dim = 40;
    double lambda = std::pow(10.0, trial % 6);
    auto m = oracle::random_model(rng, dim, 12, lambda);
    auto x = oracle::random_sparse(rng, dim, 12);
    auto y = oracle::random_sparse(rng, dim, 12);
    auto ex = embed(m, x);
    auto ey = embed(m, y);
    REQUIRE(ex.size() == m.n_atoms());
    double dot = 0.0;
    for (std::size_t c = 0; c < ex.size(); ++c) dot += ex[c] * ey[c];
    double s = score(m, x, y);
    CHECK_THAT(dot, Catch::Matchers::WithinAbs(s, 1e-9 * (1.0 + std::abs(s))));
  }
}

TEST_CASE("structure stats count features, atoms and surviving nonzeros") {
  SimilarityModel m(1.5);
  m.add_weight(BasisElement(1, 2, BasisSign::positive), 1.0);
  StructureStats st = structure_stats(m);
  CHECK(st.n_atoms == 1);
  CHECK(st.active_features == 2);
  CHECK(st.nnz_entries == 4);

  // equal-weight P and N on the same pair cancel off the diagonal
  SimilarityModel c(2.0);
  c.add_weight(BasisElement(1, 2, BasisSign::positive), 0.5);
  c.add_weight(BasisElement(1, 2, BasisSign::negative), 0.5);
  st = structure_stats(c);
  CHECK(st.n_atoms == 2);
  CHECK(st.active_features == 2);
  CHECK(st.nnz_entries == 2);
}

TEST_CASE("model save/load round-trip preserves scores") {
  std::mt19937_64 rng(55);
  auto m = oracle::random_model(rng, 50, 9, 100.0);
  std::string text = model_to_string(m);
  SimilarityModel loaded = model_from_string(text);
  CHECK(loaded.lambda() == m.lambda());
  REQUIRE(loaded.n_atoms() == m.n_atoms());
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_sparse(rng, 50, 15);
    auto y = oracle::random_sparse(rng, 50, 15);
    CHECK(score(loaded, x, y) == score(m, x, y));
  }
}

TEST_CASE("model load rejects invariant violations") {
  // weights that do not sum to one
  CHECK_THROWS_AS(model_from_string("hdsl 1 λ=2\nP 0 1 0.5\nN 2 3 0.4\n"), FormatError);
  // negative weight
  CHECK_THROWS_AS(model_from_string("hdsl 1 λ=2\nP 0 1 -1\nN 2 3 2\n"), FormatError);
  // bad version
  CHECK_THROWS_AS(model_from_string("hdsl 9 λ=2\nP 0 1 1\n"), FormatError);
  // i >= j
  CHECK_THROWS_AS(model_from_string("hdsl 1 λ=2\nP 1 1 1\n"), FormatError);
  // duplicate atom
  CHECK_THROWS_AS(model_from_string("hdsl 1 λ=2\nP 0 1 0.5\nP 0 1 0.5\n"), FormatError);
  // nonpositive lambda
  CHECK_THROWS_AS(model_from_string("hdsl 1 λ=0\nP 0 1 1\n"), FormatError);
  // sane file passes
  CHECK_NOTHROW(model_from_string("hdsl 1 λ=1000\nP 0 1 0.25\nN 0 1 0.75\n"));
}

TEST_CASE("duplicate forward picks merge into one atom") {
  SimilarityModel m(1.0);
  m.add_weight(BasisElement(0, 1, BasisSign::positive), 0.5);
  m.add_weight(BasisElement(1, 0, BasisSign::positive), 0.5);  // same canonical atom
  CHECK(m.n_atoms() == 1);
  CHECK(m.weight_of(BasisElement(0, 1, BasisSign::positive)) == 1.0);
}
