#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdsl/io_util.hpp"
#include "hdsl/sparse_vector.hpp"

namespace hdsl {

class ParseError : public FormatError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A labeled set of sparse instances sharing one feature space.
struct Dataset {
  std::vector<SparseVector> instances;
  std::vector<int> labels;
  FeatureId dimension = 0;
  std::string split_tag;

  std::size_t size() const { return instances.size(); }
};

// LIBSVM text format: each nonempty line is "label idx:val idx:val ..." with
// 1-based feature indices. Indices are mapped to 0-based internally. When
// expected_dimension is given, indices beyond it are rejected; otherwise the
// dimension is 1 + max observed 0-based index.
inline Dataset parse_libsvm(std::istream& in, std::optional<FeatureId> expected_dimension = {},
                            std::string split_tag = {}) {
  Dataset ds;
  ds.split_tag = std::move(split_tag);
  std::string line;
  std::size_t line_no = 0;
  FeatureId max_seen = -1;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0][0] == '#') continue;

    double label_val = 0.0;
    if (!parse_double(tokens[0], label_val)) {
      throw ParseError(line_no, "malformed label '" + std::string(tokens[0]) + "'");
    }
    double rounded = std::nearbyint(label_val);
    if (std::abs(label_val - rounded) > 1e-9) {
      throw ParseError(line_no, "non-integer class label '" + std::string(tokens[0]) + "'");
    }

    std::vector<SparseVector::Entry> entries;
    entries.reserve(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      std::string_view tok = tokens[i];
      std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == tok.size()) {
        throw ParseError(line_no, "malformed feature token '" + std::string(tok) + "'");
      }
      long long idx = 0;
      double val = 0.0;
      if (!parse_long(tok.substr(0, colon), idx) || !parse_double(tok.substr(colon + 1), val)) {
        throw ParseError(line_no, "malformed feature token '" + std::string(tok) + "'");
      }
      if (idx <= 0) {
        throw ParseError(line_no, "feature index " + std::to_string(idx) + " out of range (1-based)");
      }
      if (expected_dimension && idx > *expected_dimension) {
        throw ParseError(line_no, "feature index " + std::to_string(idx) + " exceeds dimension " +
                                      std::to_string(*expected_dimension));
      }
      FeatureId f = static_cast<FeatureId>(idx - 1);
      if (f > max_seen) max_seen = f;
      if (val != 0.0) entries.emplace_back(f, val);
    }
    try {
      ds.instances.emplace_back(std::move(entries));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    ds.labels.push_back(static_cast<int>(rounded));
  }
  ds.dimension = expected_dimension ? *expected_dimension : max_seen + 1;
  return ds;
}

inline Dataset load_libsvm_file(const std::string& path,
                                std::optional<FeatureId> expected_dimension = {},
                                std::string split_tag = {}) {
  std::string content = read_text_file(path);
  std::istringstream in(content);
  try {
    return parse_libsvm(in, expected_dimension, std::move(split_tag));
  } catch (const ParseError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// Writes LIBSVM text with 1-based indices and round-trip-exact values.
inline void serialize_libsvm(const Dataset& ds, std::ostream& out) {
  for (std::size_t n = 0; n < ds.size(); ++n) {
    out << ds.labels[n];
    for (const auto& [f, v] : ds.instances[n].entries()) {
      out << ' ' << (f + 1) << ':' << format_double(v);
    }
    out << '\n';
  }
}

struct NormalizeResult {
  std::vector<Dataset> datasets;
  std::vector<std::string> warnings;
};

// Scales every feature by its maximum over the training split so training
// values land in [0,1]. The minimum is treated as 0, which keeps the data
// sparse. Statistics come from the dataset tagged "train" (the first dataset
// when none is tagged) and are applied to all splits. Features never seen in
// the training split are left unscaled with a warning. Negative inputs are
// rejected.
inline NormalizeResult normalize_minmax(const std::vector<Dataset>& group) {
  if (group.empty()) {
    throw std::invalid_argument("normalize_minmax: empty dataset group");
  }
  FeatureId dim = group[0].dimension;
  std::size_t train_idx = 0;
  for (std::size_t g = 0; g < group.size(); ++g) {
    if (group[g].dimension != dim) {
      throw std::invalid_argument("normalize_minmax: datasets disagree on dimension");
    }
    if (group[g].split_tag == "train") train_idx = g;
  }

  std::vector<double> feature_max(static_cast<std::size_t>(dim), 0.0);
  for (const auto& x : group[train_idx].instances) {
    for (const auto& [f, v] : x.entries()) {
      if (v < 0.0) {
        throw std::invalid_argument("normalize_minmax: negative feature value");
      }
      if (v > feature_max[static_cast<std::size_t>(f)]) {
        feature_max[static_cast<std::size_t>(f)] = v;
      }
    }
  }

  NormalizeResult result;
  result.datasets = group;
  std::vector<bool> warned(static_cast<std::size_t>(dim), false);
  for (std::size_t g = 0; g < result.datasets.size(); ++g) {
    for (auto& x : result.datasets[g].instances) {
      std::vector<SparseVector::Entry> scaled;
      scaled.reserve(x.nnz());
      for (auto [f, v] : x.entries()) {
        if (v < 0.0) {
          throw std::invalid_argument("normalize_minmax: negative feature value");
        }
        double mx = feature_max[static_cast<std::size_t>(f)];
        if (mx > 0.0) {
          scaled.emplace_back(f, v / mx);
        } else {
          scaled.emplace_back(f, v);
          if (g != train_idx && !warned[static_cast<std::size_t>(f)]) {
            warned[static_cast<std::size_t>(f)] = true;
            result.warnings.push_back("feature " + std::to_string(f + 1) +
                                      " unseen in training split; left unscaled");
          }
        }
      }
      x = SparseVector(std::move(scaled));
    }
  }
  return result;
}

}  // namespace hdsl
