#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>
#include <sstream>

#include "hdsl/dataset.hpp"
#include "hdsl/io_util.hpp"
#include "hdsl/sparse_vector.hpp"

using namespace hdsl;

TEST_CASE("libsvm parsing maps 1-based indices to 0-based") {
  std::istringstream in("1 3:0.5 7:1.0\n");
  Dataset ds = parse_libsvm(in);
  REQUIRE(ds.size() == 1);
  CHECK(ds.labels[0] == 1);
  REQUIRE(ds.instances[0].nnz() == 2);
  CHECK(ds.instances[0].entries()[0] == SparseVector::Entry{2, 0.5});
  CHECK(ds.instances[0].entries()[1] == SparseVector::Entry{6, 1.0});
  CHECK(ds.dimension == 7);
}

TEST_CASE("label-only line yields an empty instance") {
  std::istringstream in("-1\n");
  Dataset ds = parse_libsvm(in);
  REQUIRE(ds.size() == 1);
  CHECK(ds.labels[0] == -1);
  CHECK(ds.instances[0].empty());
  CHECK(ds.dimension == 0);
}

TEST_CASE("dimension is the max observed index when not specified") {
  std::istringstream in("1 47236:0.25\n-1 3:1\n");
  Dataset ds = parse_libsvm(in);
  CHECK(ds.dimension == 47236);
}

TEST_CASE("expected dimension bounds the indices") {
  std::istringstream ok("1 5:2\n");
  Dataset ds = parse_libsvm(ok, 10);
  CHECK(ds.dimension == 10);

  std::istringstream bad("1 11:2\n");
  CHECK_THROWS_AS(parse_libsvm(bad, 10), ParseError);
}

TEST_CASE("parse errors carry the line number") {
  std::istringstream bad("1 2:0.5\n-1 zz\n");
  try {
    parse_libsvm(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }

  std::istringstream zero_idx("1 0:3\n");
  CHECK_THROWS_AS(parse_libsvm(zero_idx), ParseError);
  std::istringstream dup("1 2:1 2:2\n");
  CHECK_THROWS_AS(parse_libsvm(dup), ParseError);
  std::istringstream nolabel(":5 1:2\n");
  CHECK_THROWS_AS(parse_libsvm(nolabel), ParseError);
}

TEST_CASE("explicit zeros are dropped, blank lines skipped") {
  std::istringstream in("\n2 1:0 4:3\n\n");
  Dataset ds = parse_libsvm(in);
  REQUIRE(ds.size() == 1);
  CHECK(ds.instances[0].nnz() == 1);
  CHECK(ds.instances[0].value_at(3) == 3.0);
}

TEST_CASE("parse-serialize-parse round-trip is exact") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> val(1e-8, 5.0);
  std::ostringstream file;
  for (int n = 0; n < 40; ++n) {
    file << (rng() % 2 ? 1 : -1);
    int f = 0;
    for (int e = 0; e < 10; ++e) {
      f += 1 + static_cast<int>(rng() % 700);
      file << ' ' << f << ':' << format_double(val(rng));
    }
    file << '\n';
  }
  std::istringstream first_in(file.str());
  Dataset first = parse_libsvm(first_in);
  std::ostringstream serialized;
  serialize_libsvm(first, serialized);
  std::istringstream second_in(serialized.str());
  Dataset second = parse_libsvm(second_in);
  REQUIRE(first.size() == second.size());
  CHECK(first.dimension == second.dimension);
  CHECK(first.labels == second.labels);
  for (std::size_t n = 0; n < first.size(); ++n) {
    CHECK(first.instances[n] == second.instances[n]);
  }
}

TEST_CASE("gzip input accepted by extension") {
  auto dir = std::filesystem::temp_directory_path() / "hdsl_gz_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "data.libsvm.gz").string();
  gzFile gz = gzopen(path.c_str(), "wb");
  REQUIRE(gz != nullptr);
  const char* text = "1 3:0.5\n-1 2:1.5\n";
  gzwrite(gz, text, static_cast<unsigned>(std::strlen(text)));
  gzclose(gz);

  Dataset ds = load_libsvm_file(path);
  REQUIRE(ds.size() == 2);
  CHECK(ds.instances[0].value_at(2) == 0.5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("min-max normalization scales by the training maximum") {
  std::istringstream train_in("1 1:2\n-1 1:4 2:0.5\n");
  std::istringstream test_in("1 1:3 3:3\n");
  Dataset train = parse_libsvm(train_in, 3, "train");
  Dataset test = parse_libsvm(test_in, 3, "test");

  auto result = normalize_minmax({train, test});
  const Dataset& ntrain = result.datasets[0];
  const Dataset& ntest = result.datasets[1];
  CHECK(ntrain.instances[0].value_at(0) == 0.5);
  CHECK(ntrain.instances[1].value_at(0) == 1.0);
  CHECK(ntrain.instances[1].value_at(1) == 1.0);
  // training values all land in [0,1]
  for (const auto& x : ntrain.instances) {
    for (const auto& [f, v] : x.entries()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  // feature 2 (0-based) never seen in train: left unscaled, warning emitted
  CHECK(ntest.instances[0].value_at(2) == 3.0);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("feature 3") != std::string::npos);
  // feature 0 scaled by the training max, not the global max
  CHECK(ntest.instances[0].value_at(0) == 0.75);
}

TEST_CASE("normalization rejects negative values") {
  std::istringstream in("1 1:-2\n");
  Dataset train = parse_libsvm(in, 1, "train");
  CHECK_THROWS_AS(normalize_minmax({train}), std::invalid_argument);
}

TEST_CASE("normalization statistics come from the split tagged train") {
  std::istringstream a_in("1 1:8\n-1 1:1\n");
  std::istringstream b_in("1 1:2\n-1 1:4\n");
  Dataset a = parse_libsvm(a_in, 1, "test");
  Dataset b = parse_libsvm(b_in, 1, "train");
  auto result = normalize_minmax({a, b});
  CHECK(result.datasets[1].instances[1].value_at(0) == 1.0);  // 4 / 4
  CHECK(result.datasets[0].instances[0].value_at(0) == 2.0);  // 8 / 4
}

TEST_CASE("sparse_dot basics") {
  SparseVector a({{0, 1.0}});
  SparseVector b({{0, 2.0}});
  CHECK(sparse_dot(a, b) == 2.0);

  SparseVector c({{1, 3.0}, {5, 2.0}});
  SparseVector d({{0, 1.0}, {2, 4.0}});
  CHECK(sparse_dot(c, d) == 0.0);

  SparseVector e({{1, 0.5}, {3, 1.0}});
  SparseVector f({{3, 2.0}, {9, 1.0}});
  CHECK(sparse_dot(e, f) == 2.0);
}

TEST_CASE("sparse_dot is symmetric and bilinear") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SparseVector::Entry> ea, eb;
    for (int f = 0; f < 60; ++f) {
      if (rng() % 3 == 0) ea.emplace_back(f, val(rng));
      if (rng() % 3 == 0) eb.emplace_back(f, val(rng));
    }
    SparseVector a(std::move(ea)), b(std::move(eb));
    CHECK(sparse_dot(a, b) == sparse_dot(b, a));

    double factor = val(rng);
    std::vector<SparseVector::Entry> scaled;
    for (auto [f, v] : a.entries()) scaled.emplace_back(f, factor * v);
    SparseVector fa(std::move(scaled));
    CHECK_THAT(sparse_dot(fa, b),
               Catch::Matchers::WithinAbs(factor * sparse_dot(a, b), 1e-12));
  }
}

TEST_CASE("sparse_dot uses lookup mode on very uneven sizes") {
  std::vector<SparseVector::Entry> big;
  for (int f = 0; f < 4000; ++f) big.emplace_back(f, 1.0);
  SparseVector a({{17, 2.0}, {3999, 3.0}});
  SparseVector b(std::move(big));
  CHECK(sparse_dot(a, b) == 5.0);
  CHECK(sparse_dot(b, a) == 5.0);
}

TEST_CASE("sparse vector rejects duplicates and keeps order") {
  CHECK_THROWS_AS(SparseVector({{3, 1.0}, {3, 2.0}}), std::invalid_argument);
  SparseVector v({{9, 1.0}, {2, 2.0}, {5, 0.0}});
  REQUIRE(v.nnz() == 2);
  CHECK(v.entries()[0].first == 2);
  CHECK(v.entries()[1].first == 9);
}

TEST_CASE("sparse_diff cancels exactly equal entries") {
  SparseVector a({{1, 2.0}, {4, 1.0}});
  SparseVector b({{1, 2.0}, {5, 3.0}});
  SparseVector d = sparse_diff(a, b);
  CHECK(d.value_at(1) == 0.0);
  CHECK(d.value_at(4) == 1.0);
  CHECK(d.value_at(5) == -3.0);
  CHECK(d.nnz() == 2);
}
