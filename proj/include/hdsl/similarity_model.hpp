#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdsl/basis.hpp"
#include "hdsl/io_util.hpp"
#include "hdsl/sparse_vector.hpp"

namespace hdsl {

// The learned similarity matrix M = sum_B alpha_B * B kept as an explicit
// convex combination of basis elements. Every member is symmetric PSD by
// construction. Atom weights are strictly positive and sum to 1.
class SimilarityModel {
 public:
  using AtomMap = std::map<BasisElement, double>;

  SimilarityModel() = default;
  explicit SimilarityModel(double lambda) : lambda_(lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("scale lambda must be positive");
  }

  double lambda() const { return lambda_; }
  const AtomMap& atoms() const { return atoms_; }
  std::size_t n_atoms() const { return atoms_.size(); }

  // Merges into an existing atom if the basis is already active.
  void add_weight(const BasisElement& b, double delta) {
    auto [it, inserted] = atoms_.try_emplace(b, 0.0);
    it->second += delta;
    if (it->second <= 0.0) atoms_.erase(it);
  }

  // Sets the weight exactly; nonpositive removes the atom.
  void set_weight(const BasisElement& b, double w) {
    if (w > 0.0) {
      atoms_[b] = w;
    } else {
      atoms_.erase(b);
    }
  }

  void scale_weights(double factor) {
    for (auto& [b, w] : atoms_) w *= factor;
  }

  double weight_of(const BasisElement& b) const {
    auto it = atoms_.find(b);
    return it == atoms_.end() ? 0.0 : it->second;
  }

  double weight_sum() const {
    double s = 0.0;
    for (const auto& [b, w] : atoms_) s += w;
    return s;
  }

  // Removes atoms below drop_tol; returns the dropped atoms so callers that
  // track quantities linear in M can subtract their contribution exactly.
  std::vector<std::pair<BasisElement, double>> drop_small_atoms(double drop_tol) {
    std::vector<std::pair<BasisElement, double>> dropped;
    for (auto it = atoms_.begin(); it != atoms_.end();) {
      if (it->second < drop_tol) {
        dropped.emplace_back(it->first, it->second);
        it = atoms_.erase(it);
      } else {
        ++it;
      }
    }
    return dropped;
  }

  void check_feasible(double tol = 1e-9) const {
    double s = 0.0;
    for (const auto& [b, w] : atoms_) {
      if (!(w > 0.0)) throw std::invalid_argument("atom weight must be positive");
      s += w;
    }
    if (std::abs(s - 1.0) > tol) {
      throw std::invalid_argument("atom weights sum to " + format_double(s) + ", expected 1");
    }
  }

 private:
  double lambda_ = 1.0;
  AtomMap atoms_;
};

// S_M(x, x') = x^T M x' evaluated atom by atom.
inline double score(const SimilarityModel& m, const SparseVector& x, const SparseVector& y) {
  double s = 0.0;
  for (const auto& [b, w] : m.atoms()) {
    s += w * basis_factor(b, x) * basis_factor(b, y);
  }
  return s * m.lambda();
}

// Materializes M as a dense row-major d*d matrix. Test and inspection aid;
// refuses large d unless forced.
inline std::vector<double> to_dense(const SimilarityModel& m, FeatureId d, bool force = false) {
  if (d <= 0) throw std::invalid_argument("to_dense: dimension must be positive");
  if (d > 10000 && !force) {
    throw std::invalid_argument("to_dense: refusing d > 10000 (pass force to override)");
  }
  std::vector<double> dense(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  auto at = [&](FeatureId r, FeatureId c) -> double& {
    return dense[static_cast<std::size_t>(r) * static_cast<std::size_t>(d) + c];
  };
  for (const auto& [b, w] : m.atoms()) {
    if (b.j >= d) throw std::invalid_argument("to_dense: basis feature exceeds dimension");
    double v = m.lambda() * w;
    at(b.i, b.i) += v;
    at(b.j, b.j) += v;
    at(b.i, b.j) += b.sign_factor() * v;
    at(b.j, b.i) += b.sign_factor() * v;
  }
  return dense;
}

// Rank-one coordinates sqrt(alpha*lambda) * <x, e_i +- e_j>, one per atom in
// canonical atom order. Dot products of embeddings reproduce score().
inline std::vector<double> embed(const SimilarityModel& m, const SparseVector& x) {
  std::vector<double> out;
  out.reserve(m.n_atoms());
  for (const auto& [b, w] : m.atoms()) {
    out.push_back(std::sqrt(w * m.lambda()) * basis_factor(b, x));
  }
  return out;
}

struct StructureStats {
  std::size_t active_features = 0;
  std::size_t nnz_entries = 0;
  std::size_t n_atoms = 0;
};

// Feature and nonzero counts of the implied matrix. Entries that cancel to
// exact zero (paired +/- atoms on the same features) are not counted.
inline StructureStats structure_stats(const SimilarityModel& m) {
  StructureStats st;
  st.n_atoms = m.n_atoms();
  std::set<FeatureId> features;
  std::map<std::pair<FeatureId, FeatureId>, double> cells;
  for (const auto& [b, w] : m.atoms()) {
    features.insert(b.i);
    features.insert(b.j);
    double v = m.lambda() * w;
    cells[{b.i, b.i}] += v;
    cells[{b.j, b.j}] += v;
    cells[{b.i, b.j}] += b.sign_factor() * v;
  }
  st.active_features = features.size();
  for (const auto& [cell, v] : cells) {
    if (v == 0.0) continue;
    // off-diagonal cells are stored once for the (i,j)/(j,i) pair
    st.nnz_entries += cell.first == cell.second ? 1 : 2;
  }
  return st;
}

inline void save_model(const SimilarityModel& m, std::ostream& out) {
  out << "hdsl 1 λ=" << format_double(m.lambda()) << '\n';
  for (const auto& [b, w] : m.atoms()) {
    out << (b.sign == BasisSign::positive ? 'P' : 'N') << ' ' << b.i << ' ' << b.j << ' '
        << format_double(w) << '\n';
  }
}

inline SimilarityModel load_model(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("model file: empty input");
  auto head = split_ws(header);
  if (head.size() != 3 || head[0] != "hdsl") {
    throw FormatError("model file: bad header '" + header + "'");
  }
  if (head[1] != "1") {
    throw FormatError("model file: unsupported version '" + std::string(head[1]) + "'");
  }
  std::string_view lam_tok = head[2];
  std::string_view lam_key = "λ=";
  if (lam_tok.substr(0, lam_key.size()) != lam_key) {
    throw FormatError("model file: bad header '" + header + "'");
  }
  double lambda = 0.0;
  if (!parse_double(lam_tok.substr(lam_key.size()), lambda) || !(lambda > 0.0)) {
    throw FormatError("model file: invalid scale in header");
  }

  SimilarityModel m(lambda);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 4 || (tok[0] != "P" && tok[0] != "N")) {
      throw FormatError("model file line " + std::to_string(line_no) + ": " + std::string("bad atom line '" + line + "'"));
    }
    long long i = 0, j = 0;
    double w = 0.0;
    if (!parse_long(tok[1], i) || !parse_long(tok[2], j) || !parse_double(tok[3], w)) {
      throw FormatError("model file line " + std::to_string(line_no) + ": " + std::string("bad atom line '" + line + "'"));
    }
    if (i < 0 || j < 0 || i >= j) {
      throw FormatError("model file line " + std::to_string(line_no) + ": " + std::string("atom features must satisfy 0 <= i < j"));
    }
    if (!(w > 0.0)) {
      throw FormatError("model file line " + std::to_string(line_no) + ": " + std::string("atom weight must be positive"));
    }
    BasisElement b(static_cast<FeatureId>(i), static_cast<FeatureId>(j),
                   tok[0] == "P" ? BasisSign::positive : BasisSign::negative);
    if (m.weight_of(b) != 0.0) {
      throw FormatError("model file line " + std::to_string(line_no) + ": " + std::string("duplicate atom"));
    }
    m.add_weight(b, w);
  }
  try {
    m.check_feasible();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  return m;
}

inline std::string model_to_string(const SimilarityModel& m) {
  std::ostringstream ss;
  save_model(m, ss);
  return ss.str();
}

inline SimilarityModel model_from_string(const std::string& text) {
  std::istringstream ss(text);
  return load_model(ss);
}

}  // namespace hdsl
