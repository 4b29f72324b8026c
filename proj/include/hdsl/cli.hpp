#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hdsl/constraints.hpp"
#include "hdsl/dataset.hpp"
#include "hdsl/diag.hpp"
#include "hdsl/evaluation.hpp"
#include "hdsl/io_util.hpp"
#include "hdsl/optimizer.hpp"
#include "hdsl/similarity_model.hpp"

namespace hdsl::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage or input/output problems.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TrainArgs {
  std::string train_path;
  std::string validation_path;
  std::string test_path;
  std::string algo = "hdsl";
  std::string strategy = "heuristic";
  double lambda = 1.0;
  std::vector<double> lambda_grid;
  std::string constraints_spec = "knn:3:5";
  std::string constraints_in;
  std::string constraints_out;
  std::uint64_t seed = 0;
  std::size_t max_iters = 1000;
  std::size_t minibatch = 1000;
  std::size_t validation_every = 50;
  double line_search_tol = 1e-6;
  double gap_tol = 1e-6;
  double drop_tol = 1e-12;
  std::size_t knn_k = 3;
  std::size_t threads = 1;
  bool no_normalize = false;
  std::string model_out;
  std::string log_out;
  std::string curve_out;
  std::string reg = "l2";
  double reg_weight = 1e-3;
};

struct EvalArgs {
  std::string train_path;
  std::string test_path;
  std::string model_path;
  bool identity = false;
  std::size_t knn_k = 3;
  std::size_t threads = 1;
  bool no_normalize = false;
  std::string predictions_out;
};

struct ProjectArgs {
  std::string model_path;
  std::string data_path;
  std::string train_path;
  bool no_normalize = false;
  std::string out_path;
};

struct InspectArgs {
  std::string model_path;
};

// Splits loaded from separate files can disagree on the inferred dimension
// when the maximum feature index differs; stretch them all to the largest.
inline void align_dimensions(std::vector<Dataset*> group) {
  FeatureId dim = 0;
  for (const Dataset* ds : group) dim = std::max(dim, ds->dimension);
  for (Dataset* ds : group) ds->dimension = dim;
}

inline ConstraintSet build_constraints(const TrainArgs& args, const Dataset& train,
                                       std::ostream& err) {
  std::vector<std::string> warnings;
  std::optional<ConstraintSet> cs;
  if (!args.constraints_in.empty()) {
    std::istringstream in(read_text_file(args.constraints_in));
    cs = load_triplets(train, in);
  } else {
    auto parts = split_char(args.constraints_spec, ':');
    if (parts.size() == 3 && parts[0] == "knn") {
      long long targets = 0, impostors = 0;
      if (!parse_long(parts[1], targets) || !parse_long(parts[2], impostors) || targets < 1 ||
          impostors < 1) {
        throw UsageError("bad --constraints spec '" + args.constraints_spec + "'");
      }
      cs = build_triplets_knn(train, static_cast<std::size_t>(targets),
                              static_cast<std::size_t>(impostors), &warnings);
    } else if (parts.size() == 2 && parts[0] == "random") {
      long long per = 0;
      if (!parse_long(parts[1], per) || per < 1) {
        throw UsageError("bad --constraints spec '" + args.constraints_spec + "'");
      }
      cs = build_triplets_random(train, static_cast<std::size_t>(per), args.seed, &warnings);
    } else {
      throw UsageError("bad --constraints spec '" + args.constraints_spec +
                       "' (expected knn:<targets>:<impostors> or random:<per-instance>)");
    }
  }
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  if (cs->empty()) throw std::runtime_error("constraint generation produced no constraints");
  return std::move(*cs);
}

inline std::string log_csv(const std::vector<IterationLog>& rows) {
  std::ostringstream out;
  out << "iteration,objective,gap,n_atoms,n_features,step,gamma\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_double(r.objective) << ',';
    if (r.gap) out << format_double(*r.gap);
    out << ',' << r.n_atoms << ',' << r.n_features << ',' << r.step_type << ','
        << format_double(r.gamma) << '\n';
  }
  return out.str();
}

inline int run_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  if (args.model_out.empty()) throw UsageError("--model-out is required");
  if (args.algo != "hdsl" && args.algo != "diag") {
    throw UsageError("--algo must be hdsl or diag");
  }
  if (!args.lambda_grid.empty() && args.validation_path.empty()) {
    throw UsageError("--lambda-grid requires --validation for model selection");
  }
  if (!args.curve_out.empty() && (args.validation_path.empty() || args.test_path.empty())) {
    throw UsageError("--curve-out requires --validation and --test");
  }

  Dataset train = load_libsvm_file(args.train_path, {}, "train");
  std::optional<Dataset> validation, test;
  if (!args.validation_path.empty()) {
    validation = load_libsvm_file(args.validation_path, {}, "validation");
  }
  if (!args.test_path.empty()) {
    test = load_libsvm_file(args.test_path, {}, "test");
  }
  std::vector<Dataset*> splits{&train};
  if (validation) splits.push_back(&*validation);
  if (test) splits.push_back(&*test);
  align_dimensions(splits);

  if (!args.no_normalize) {
    std::vector<Dataset> group{std::move(train)};
    if (validation) group.push_back(std::move(*validation));
    if (test) group.push_back(std::move(*test));
    auto norm = normalize_minmax(group);
    for (const auto& w : norm.warnings) err << "warning: " << w << '\n';
    std::size_t g = 0;
    train = std::move(norm.datasets[g++]);
    if (validation) validation = std::move(norm.datasets[g++]);
    if (test) test = std::move(norm.datasets[g++]);
  }

  ConstraintSet cs = build_constraints(args, train, err);
  out << "constraints: " << cs.size() << '\n';
  if (!args.constraints_out.empty()) {
    std::ostringstream dump;
    dump_triplets(cs, dump);
    atomic_write_file(args.constraints_out, dump.str());
  }

  if (args.algo == "diag") {
    DiagConfig config;
    if (args.reg == "l1") {
      config.regularizer = DiagRegularizer::l1;
    } else if (args.reg == "l2") {
      config.regularizer = DiagRegularizer::l2;
    } else {
      throw UsageError("--reg must be l1 or l2");
    }
    config.reg_weight = args.reg_weight;
    config.max_iterations = args.max_iters;
    config.validation_every = args.validation_every;

    DiagValidationFn val_fn;
    if (validation) {
      val_fn = [&](const DiagModel& m) {
        return error_rate(knn_classify(train, *validation, diag_scorer(m), args.knn_k, args.threads),
                          validation->labels);
      };
    }
    DiagTrainResult result = train_diag(cs, config, val_fn);
    const DiagModel& chosen = result.best ? result.best->model : result.model;
    std::ostringstream model_text;
    save_diag(chosen, model_text);
    atomic_write_file(args.model_out, model_text.str());
    out << "algo: diag reg=" << args.reg << " reg-weight=" << format_double(args.reg_weight)
        << '\n';
    out << "iterations: " << result.iterations_run << '\n';
    out << "objective: " << format_double(result.objective_history.back()) << '\n';
    out << "nonzero-weights: " << chosen.nnz() << '\n';
    if (result.best) {
      out << "validation-error: " << format_double(result.best->validation_error) << '\n';
    }
    out << "model: " << args.model_out << '\n';
    return kExitOk;
  }

  OptimizerConfig config;
  if (args.strategy == "exact") {
    config.strategy = ForwardStrategy::exact;
  } else if (args.strategy == "minibatch") {
    config.strategy = ForwardStrategy::minibatch;
  } else if (args.strategy == "heuristic") {
    config.strategy = ForwardStrategy::heuristic;
  } else {
    throw UsageError("--strategy must be exact, minibatch or heuristic");
  }
  config.minibatch_size = args.minibatch;
  config.max_iterations = args.max_iters;
  config.line_search_tol = args.line_search_tol;
  config.gap_tolerance = args.gap_tol;
  config.drop_tol = args.drop_tol;
  config.validation_every = args.validation_every;
  config.seed = args.seed;
  config.threads = args.threads;
  config.keep_snapshots = !args.curve_out.empty();

  ValidationFn val_fn;
  if (validation) {
    val_fn = [&](const SimilarityModel& m) {
      return error_rate(knn_classify_embedded(train, *validation, m, args.knn_k, args.threads),
                        validation->labels);
    };
  }

  std::vector<double> grid = args.lambda_grid;
  if (grid.empty()) grid.push_back(args.lambda);
  std::optional<TrainerState> chosen_state;
  double chosen_lambda = grid.front();
  double chosen_error = 0.0;
  for (double lambda : grid) {
    if (!(lambda > 0.0)) throw UsageError("lambda values must be positive");
    config.lambda = lambda;
    TrainerState state = hdsl::train(config, cs, val_fn);
    double err_value = state.best ? state.best->validation_error
                                  : state.objective_history.back();
    if (grid.size() > 1) {
      out << "lambda " << format_double(lambda) << ": validation-error "
          << format_double(err_value) << '\n';
    }
    if (!chosen_state || err_value < chosen_error) {
      chosen_state = std::move(state);
      chosen_lambda = lambda;
      chosen_error = err_value;
    }
  }

  TrainerState& state = *chosen_state;
  const SimilarityModel& model = state.best ? state.best->model : state.model;
  std::ostringstream model_text;
  save_model(model, model_text);
  atomic_write_file(args.model_out, model_text.str());
  if (!args.log_out.empty()) atomic_write_file(args.log_out, log_csv(state.log));
  if (!args.curve_out.empty()) {
    auto curve = dimension_curve(state.snapshots, train, *validation, *test, args.knn_k,
                                 args.threads);
    std::ostringstream curve_text;
    write_curve_csv(curve, curve_text);
    atomic_write_file(args.curve_out, curve_text.str());
  }

  StructureStats st = structure_stats(model);
  out << "algo: hdsl strategy=" << args.strategy << " lambda=" << format_double(chosen_lambda)
      << '\n';
  out << "iterations: " << state.iterations_run << (state.converged ? " (converged)" : "")
      << '\n';
  out << "objective: " << format_double(state.objective_history.back()) << '\n';
  out << "atoms: " << st.n_atoms << '\n';
  out << "features: " << st.active_features << '\n';
  out << "nnz: " << st.nnz_entries << '\n';
  if (state.best) {
    out << "validation-error: " << format_double(state.best->validation_error) << " (iteration "
        << state.best->iteration << ")\n";
  }
  out << "model: " << args.model_out << '\n';
  return kExitOk;
}

// "hdsl" or "diag" from the first token of the model file.
inline std::string sniff_model_kind(const std::string& content) {
  auto pos = content.find_first_of(" \t\n");
  return pos == std::string::npos ? content : content.substr(0, pos);
}

inline int run_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  if (args.identity != args.model_path.empty()) {
    throw UsageError("exactly one of --model and --identity is required");
  }

  Dataset train = load_libsvm_file(args.train_path, {}, "train");
  Dataset test = load_libsvm_file(args.test_path, {}, "test");
  align_dimensions({&train, &test});
  if (!args.no_normalize) {
    auto norm = normalize_minmax({std::move(train), std::move(test)});
    for (const auto& w : norm.warnings) err << "warning: " << w << '\n';
    train = std::move(norm.datasets[0]);
    test = std::move(norm.datasets[1]);
  }

  std::vector<int> predictions;
  if (args.identity) {
    predictions = knn_classify(train, test, identity_scorer(), args.knn_k, args.threads);
    out << args.knn_k << "-NN test error (%): "
        << format_double(error_rate(predictions, test.labels)) << '\n';
  } else {
    std::string content = read_text_file(args.model_path);
    std::string kind = sniff_model_kind(content);
    std::istringstream in(content);
    if (kind == "hdsl") {
      SimilarityModel model = load_model(in);
      predictions = knn_classify(train, test, model_scorer(model), args.knn_k, args.threads);
      StructureStats st = structure_stats(model);
      out << args.knn_k << "-NN test error (%): "
          << format_double(error_rate(predictions, test.labels)) << " [" << st.active_features
          << "]\n";
      out << "atoms: " << st.n_atoms << '\n';
      out << "features: " << st.active_features << '\n';
      out << "nnz: " << st.nnz_entries << '\n';
    } else if (kind == "diag") {
      DiagModel model = load_diag(in, static_cast<std::size_t>(train.dimension));
      predictions = knn_classify(train, test, diag_scorer(model), args.knn_k, args.threads);
      out << args.knn_k << "-NN test error (%): "
          << format_double(error_rate(predictions, test.labels)) << " [" << model.nnz() << "]\n";
      out << "nonzero-weights: " << model.nnz() << '\n';
    } else {
      throw FormatError("unrecognized model file kind '" + kind + "'");
    }
  }

  if (!args.predictions_out.empty()) {
    std::ostringstream csv;
    write_predictions_csv(predictions, test.labels, csv);
    atomic_write_file(args.predictions_out, csv.str());
  }
  return kExitOk;
}

inline int run_project(const ProjectArgs& args, std::ostream& out, std::ostream& err) {
  if (!args.no_normalize && args.train_path.empty()) {
    throw UsageError("--train is required unless --no-normalize is given "
                     "(normalization statistics come from the training split)");
  }
  std::istringstream model_in(read_text_file(args.model_path));
  SimilarityModel model = load_model(model_in);

  Dataset data;
  if (args.no_normalize) {
    data = load_libsvm_file(args.data_path);
  } else {
    Dataset train = load_libsvm_file(args.train_path, {}, "train");
    data = load_libsvm_file(args.data_path, {}, "data");
    align_dimensions({&train, &data});
    auto norm = normalize_minmax({std::move(train), std::move(data)});
    for (const auto& w : norm.warnings) err << "warning: " << w << '\n';
    data = std::move(norm.datasets[1]);
  }

  std::ostringstream csv;
  for (std::size_t c = 0; c < model.n_atoms(); ++c) {
    csv << (c > 0 ? "," : "") << 'e' << c;
  }
  csv << '\n';
  for (const auto& x : data.instances) {
    auto coords = embed(model, x);
    for (std::size_t c = 0; c < coords.size(); ++c) {
      csv << (c > 0 ? "," : "") << format_double(coords[c]);
    }
    csv << '\n';
  }
  atomic_write_file(args.out_path, csv.str());
  out << "projected " << data.size() << " instances into " << model.n_atoms()
      << " dimensions: " << args.out_path << '\n';
  return kExitOk;
}

inline int run_inspect(const InspectArgs& args, std::ostream& out, std::ostream&) {
  std::istringstream model_in(read_text_file(args.model_path));
  SimilarityModel model = load_model(model_in);

  std::map<std::pair<FeatureId, FeatureId>, double> cells;
  for (const auto& [b, w] : model.atoms()) {
    double v = model.lambda() * w;
    cells[{b.i, b.i}] += v;
    cells[{b.j, b.j}] += v;
    cells[{b.i, b.j}] += b.sign_factor() * v;
    cells[{b.j, b.i}] += b.sign_factor() * v;
  }
  for (const auto& [cell, v] : cells) {
    if (v == 0.0) continue;
    out << cell.first << ' ' << cell.second << ' ' << format_double(v) << '\n';
  }
  StructureStats st = structure_stats(model);
  out << "# lambda " << format_double(model.lambda()) << '\n';
  out << "# atoms " << st.n_atoms << '\n';
  out << "# features " << st.active_features << '\n';
  out << "# nnz " << st.nnz_entries << '\n';
  return kExitOk;
}

// Flat key=value configuration: each nonempty, non-# line becomes the long
// option --key=value (bare keys become flags). Tokens are inserted right
// after the subcommand, before the explicit flags; with take-last precedence
// the command line overrides the file.
inline std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      ++i;
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty() || rest.empty()) return rest;

  std::vector<std::string> expanded;
  expanded.push_back(rest[0]);  // subcommand
  std::istringstream in(read_text_file(config_path));
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0][0] == '#') continue;
    std::string entry(line.substr(line.find_first_not_of(" \t")));
    while (!entry.empty() && (entry.back() == '\r' || entry.back() == ' ' || entry.back() == '\t')) {
      entry.pop_back();
    }
    expanded.push_back("--" + entry);
  }
  expanded.insert(expanded.end(), rest.begin() + 1, rest.end());
  return expanded;
}

}  // namespace detail

// Entry point shared by the binary and the tests. Streams default to the
// process streams; tests pass their own.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"learn and apply sparse bilinear similarities on sparse data"};
  app.require_subcommand(1);

  detail::TrainArgs train_args;
  detail::EvalArgs eval_args;
  detail::ProjectArgs project_args;
  detail::InspectArgs inspect_args;

  std::string config_placeholder;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "build constraints from a training set and fit a similarity model");
  train_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  train_cmd->add_option("--config", config_placeholder,
                        "flat key=value configuration file (flags take precedence)");
  train_cmd->add_option("--train", train_args.train_path, "training set (LIBSVM format)")
      ->required();
  train_cmd->add_option("--validation", train_args.validation_path,
                        "validation set for early stopping and grid selection");
  train_cmd->add_option("--test", train_args.test_path, "test set (dimension-curve export)");
  train_cmd->add_option("--algo", train_args.algo, "hdsl or diag");
  train_cmd->add_option("--strategy", train_args.strategy,
                        "forward-search strategy: exact, minibatch or heuristic");
  train_cmd->add_option("--lambda", train_args.lambda, "dictionary scale");
  train_cmd->add_option("--lambda-grid", train_args.lambda_grid,
                        "comma-separated scales, selected by validation error")
      ->delimiter(',');
  train_cmd->add_option("--constraints", train_args.constraints_spec,
                        "knn:<targets>:<impostors> or random:<per-instance>");
  train_cmd->add_option("--constraints-in", train_args.constraints_in,
                        "load triplets from a dump instead of generating them");
  train_cmd->add_option("--constraints-out", train_args.constraints_out,
                        "dump generated triplets for reproducibility");
  train_cmd->add_option("--seed", train_args.seed, "seed for all randomized steps");
  train_cmd->add_option("--max-iters", train_args.max_iters, "iteration budget");
  train_cmd->add_option("--minibatch-size", train_args.minibatch,
                        "constraints per batch for approximate strategies");
  train_cmd->add_option("--validation-every", train_args.validation_every,
                        "iterations between validation evaluations");
  train_cmd->add_option("--line-search-tol", train_args.line_search_tol,
                        "bisection tolerance on the 1-d derivative");
  train_cmd->add_option("--gap-tol", train_args.gap_tol,
                        "duality-gap stopping tolerance (exact strategy)");
  train_cmd->add_option("--drop-tol", train_args.drop_tol, "atom weight drop threshold");
  train_cmd->add_option("--knn-k", train_args.knn_k, "neighbors for validation error");
  train_cmd->add_option("--threads", train_args.threads, "worker threads");
  train_cmd->add_flag("--no-normalize", train_args.no_normalize,
                      "skip [0,1] min-max normalization");
  train_cmd->add_option("--model-out", train_args.model_out, "output model path")->required();
  train_cmd->add_option("--log-out", train_args.log_out, "per-iteration CSV log");
  train_cmd->add_option("--curve-out", train_args.curve_out,
                        "dimension-vs-error CSV (needs --validation and --test)");
  train_cmd->add_option("--reg", train_args.reg, "diag regularizer: l1 or l2");
  train_cmd->add_option("--reg-weight", train_args.reg_weight, "diag regularization weight");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "k-NN error of a stored model (or the plain dot product)");
  eval_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  eval_cmd->add_option("--config", config_placeholder,
                       "flat key=value configuration file (flags take precedence)");
  eval_cmd->add_option("--train", eval_args.train_path, "training set (neighbor pool)")
      ->required();
  eval_cmd->add_option("--test", eval_args.test_path, "evaluation set")->required();
  eval_cmd->add_option("--model", eval_args.model_path, "model file (hdsl or diag)");
  eval_cmd->add_flag("--identity", eval_args.identity, "score with the plain dot product");
  eval_cmd->add_option("--knn-k", eval_args.knn_k, "neighbors");
  eval_cmd->add_option("--threads", eval_args.threads, "worker threads");
  eval_cmd->add_flag("--no-normalize", eval_args.no_normalize,
                     "skip [0,1] min-max normalization");
  eval_cmd->add_option("--predictions-out", eval_args.predictions_out,
                       "write query_id,predicted,true CSV");

  CLI::App* project_cmd =
      app.add_subcommand("project", "embed a dataset under a model (one CSV row per instance)");
  project_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  project_cmd->add_option("--config", config_placeholder,
                          "flat key=value configuration file (flags take precedence)");
  project_cmd->add_option("--model", project_args.model_path, "hdsl model file")->required();
  project_cmd->add_option("--data", project_args.data_path, "dataset to embed")->required();
  project_cmd->add_option("--train", project_args.train_path,
                          "training set providing normalization statistics");
  project_cmd->add_flag("--no-normalize", project_args.no_normalize,
                        "skip [0,1] min-max normalization");
  project_cmd->add_option("--out", project_args.out_path, "output CSV path")->required();

  CLI::App* inspect_cmd =
      app.add_subcommand("inspect", "print the nonzero entries of the learned matrix");
  inspect_cmd->add_option("--model", inspect_args.model_path, "hdsl model file")->required();

  try {
    args = detail::expand_config_args(std::move(args));
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<const char*> argv;
  argv.push_back("hdsl");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return detail::run_train(train_args, out, err);
    if (eval_cmd->parsed()) return detail::run_eval(eval_args, out, err);
    if (project_cmd->parsed()) return detail::run_project(project_args, out, err);
    if (inspect_cmd->parsed()) return detail::run_inspect(inspect_args, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace hdsl::cli
