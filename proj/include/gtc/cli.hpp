#pragma once

// Command-line front end: forward | compress | verify | norms | synth | study.
// Exit codes: 0 ok, 1 validation, 2 tolerance failure, 3 I/O.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gtc/error.hpp"
#include "gtc/harness.hpp"
#include "gtc/io.hpp"
#include "gtc/synth.hpp"
#include "gtc/transformer.hpp"

namespace gtc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitTolerance = 2;
inline constexpr int kExitIo = 3;

/// Everything any subcommand can be told, from flags or a --config file.
struct RunConfig {
  std::string config;
  // inputs / outputs
  std::string model, features, graph, ref, compressed;
  std::string out, out_dir, csv, json_out, tolerances;
  // method
  std::string method;
  std::optional<std::size_t> d, k, iterations;
  std::optional<double> eps, jl_c, rank_tol;
  std::optional<std::uint64_t> seed;
  std::string entry;
  bool identity_maps = false;
  // verify
  std::optional<double> max_node_err, max_log_ratio;
  // synth / study instance
  std::string kind;
  std::optional<std::size_t> n, D, d_in, L, rank, degree, clusters;
  std::optional<double> beta, alpha, noise;
  std::optional<std::uint64_t> instance_seed;
  // study
  std::vector<double> sweep_d, sweep_eps;
  std::optional<std::size_t> seeds;
  std::vector<double> slope_range;
  bool require_monotone = false;
};

namespace detail {

inline std::string json_scalar(const ordered_json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ValidationError("config key '" + key + "' must be a string, number, boolean or array of those");
}

/// Applies config entries to options the command line left unset.
inline void merge_config(CLI::App& sub, const std::string& path) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed JSON config: " + e.what());
  }
  if (!doc.is_object()) throw IoError(path + ": config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config")
      throw ValidationError("unknown config key '" + key + "' for subcommand " + sub.get_name());
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& item : value) opt->add_result(json_scalar(item, key));
    } else {
      opt->add_result(json_scalar(value, key));
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  }
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
}

template <class T>
T require(const std::optional<T>& value, const char* flag) {
  if (!value) throw ValidationError(std::string("missing required option ") + flag);
  return *value;
}

/// Outputs must never overwrite an input file.
inline void check_outputs(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  namespace fs = std::filesystem;
  for (const auto& o : outputs) {
    if (o.empty()) continue;
    std::error_code ec;
    for (const auto& i : inputs) {
      if (i.empty()) continue;
      if (fs::exists(o, ec) && fs::equivalent(i, o, ec))
        throw ValidationError("output " + o + " would overwrite input " + i);
    }
  }
}

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

struct Inputs {
  Matrix X;
  AttentionGraph graph;
};

inline Inputs load_inputs(const RunConfig& c) {
  require(c.features, "--features");
  require(c.graph, "--graph");
  Matrix X = load_features(c.features).x;
  AttentionGraph g = load_graph(c.graph, X.cols());
  if (g.n() != X.cols())
    throw ValidationError("graph has " + std::to_string(g.n()) + " nodes but features have " +
                          std::to_string(X.cols()) + " rows");
  return {std::move(X), std::move(g)};
}

inline CompressParams compress_params(const RunConfig& c) {
  require(c.method, "--method");
  CompressParams p;
  p.method = c.method;
  p.d = c.d.value_or(0);
  p.eps = c.eps;
  p.k = c.k.value_or(0);
  p.jl_c = c.jl_c.value_or(kDefaultJlConstant);
  p.seed = c.seed;
  if (!c.entry.empty()) p.entry = parse_cluster_entry(c.entry);
  p.identity_maps = c.identity_maps;
  p.iterations = c.iterations.value_or(kDefaultKmeansIterations);
  p.rank_tol = c.rank_tol.value_or(linalg::kDefaultRankTol);
  return p;
}

inline SynthSpec synth_spec(const RunConfig& c, const SynthSpec& base = {}) {
  SynthSpec s = base;
  if (!c.kind.empty()) s.kind = parse_synth_kind(c.kind);
  if (c.n) s.n = *c.n;
  if (c.D) s.D = *c.D;
  if (c.d_in) s.d_in = *c.d_in;
  if (c.L) s.L = *c.L;
  if (c.beta) s.beta = *c.beta;
  if (c.alpha) s.alpha = *c.alpha;
  if (c.degree) s.degree = *c.degree;
  if (c.clusters) s.clusters = *c.clusters;
  return s;
}

inline std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

/// Tolerances from a file ("verify" block or top level), overridden by flags.
inline Tolerances load_tolerances(const RunConfig& c) {
  Tolerances t;
  if (!c.tolerances.empty()) {
    ordered_json doc;
    try {
      doc = ordered_json::parse(read_text_file(c.tolerances));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(c.tolerances + ": malformed tolerance file: " + e.what());
    }
    const ordered_json& block = doc.contains("verify") ? doc["verify"] : doc;
    try {
      if (block.contains("max_node_err")) t.max_node_err = block["max_node_err"].get<double>();
      if (block.contains("max_abs_log_ratio")) t.max_abs_log_ratio = block["max_abs_log_ratio"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(c.tolerances + ": " + e.what());
    }
  }
  if (c.max_node_err) t.max_node_err = c.max_node_err;
  if (c.max_log_ratio) t.max_abs_log_ratio = c.max_log_ratio;
  return t;
}

// ---------------------------------------------------------------- commands

inline int cmd_forward(const RunConfig& c, std::ostream& out) {
  require(c.model, "--model");
  check_outputs({c.model, c.features, c.graph}, {c.out});
  const Model m = load_model(c.model).model;
  const Inputs in = load_inputs(c);
  Matrix h = model_forward(m, in.X, in.graph).output();
  if (m.U_out) h = *m.U_out * h;
  emit(format_features(h), c.out, out);
  return kExitOk;
}

inline int cmd_compress(const RunConfig& c, std::ostream& out) {
  require(c.model, "--model");
  require(c.out, "--out");
  check_outputs({c.model, c.features, c.graph}, {c.out});
  const CompressParams p = compress_params(c);
  const Model m = load_model(c.model).model;
  const Inputs in = load_inputs(c);
  const CompressResult r = compress_detailed(m, in.X, in.graph, p);
  save_model(r.model, c.out);
  ordered_json summary;
  summary["method"] = r.model.method;
  summary["d"] = r.model.d ? ordered_json(*r.model.d) : ordered_json(nullptr);
  summary["params"] = r.model.params;
  summary["out"] = c.out;
  if (!r.report.empty()) summary["construction"] = r.report;
  out << dump(summary);
  return kExitOk;
}

inline int cmd_verify(const RunConfig& c, std::ostream& out) {
  require(c.ref, "--ref");
  require(c.compressed, "--compressed");
  check_outputs({c.ref, c.compressed, c.features, c.graph, c.tolerances}, {c.out});
  const Tolerances tol = load_tolerances(c);
  const Model ref = load_model(c.ref).model;
  const Model cmp = load_model(c.compressed).model;
  const Inputs in = load_inputs(c);
  const ErrorReport r = compare(ref, cmp, in.X, in.graph, tol);
  emit(dump(to_json(r)), c.out, out);
  return r.pass.value_or(true) ? kExitOk : kExitTolerance;
}

inline int cmd_norms(const RunConfig& c, std::ostream& out) {
  require(c.model, "--model");
  check_outputs({c.model, c.features, c.graph}, {c.out});
  const Model m = load_model(c.model).model;
  const Inputs in = load_inputs(c);
  emit(dump(norm_report(m, in.X, in.graph)), c.out, out);
  return kExitOk;
}

inline int cmd_synth(const RunConfig& c, std::ostream& out) {
  require(c.kind, "--kind");
  require(c.out_dir, "--out-dir");
  SynthSpec s = synth_spec(c);
  s.seed = require(c.seed, "--seed");
  if (c.d) s.d = *c.d;
  if (c.eps) s.eps = *c.eps;
  const SynthInstance inst = synth(s);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw IoError("cannot create " + c.out_dir + ": " + ec.message());
  const fs::path dir(c.out_dir);
  save_model(inst.model, dir / "model.json");
  save_features(inst.X, dir / "features.txt");
  save_graph(inst.graph, dir / "graph.txt");
  ordered_json truth;
  truth["kind"] = to_string(s.kind);
  truth["spec"] = {{"n", s.n},         {"D", s.D},         {"d_in", s.input_dim()}, {"L", s.L},
                   {"d", s.d},         {"eps", s.eps},     {"seed", s.seed},        {"beta", s.beta},
                   {"alpha", s.alpha}, {"degree", s.degree}, {"clusters", s.cluster_count()}};
  truth["rank"] = inst.truth.rank;
  truth["eps"] = inst.truth.eps;
  truth["layer_eps"] = inst.truth.layer_eps;
  truth["labels"] = inst.truth.labels;
  write_text_file(dir / "truth.json", dump(truth));
  out << dump({{"out_dir", c.out_dir},
               {"files", {"model.json", "features.txt", "graph.txt", "truth.json"}},
               {"n", inst.graph.n()},
               {"edges", inst.graph.edge_count()}});
  return kExitOk;
}

inline int cmd_study(const RunConfig& c, std::ostream& out) {
  StudyConfig cfg;
  cfg.method = compress_params(c);
  if (method_is_stochastic(cfg.method.method) && !cfg.method.seed && !cfg.method.identity_maps)
    throw ValidationError("method " + cfg.method.method + " needs an explicit --seed");
  if (c.sweep_d.empty() == c.sweep_eps.empty())
    throw ValidationError("give exactly one of --sweep-d and --sweep-eps");
  SynthSpec base;
  base.kind = cfg.method.method == "cluster"
                  ? SynthKind::Clustered
                  : (cfg.method.method == "jlt" ? SynthKind::Generic : SynthKind::NearLowrank);
  cfg.spec = synth_spec(c, base);
  cfg.spec.seed = c.instance_seed.value_or(0);
  if (c.rank) cfg.spec.d = *c.rank;
  else if (c.d) cfg.spec.d = *c.d;
  if (c.noise) cfg.spec.eps = *c.noise;
  if (!c.sweep_d.empty()) {
    cfg.param = SweepParam::D;
    cfg.sweep = c.sweep_d;
    for (double v : cfg.sweep)
      if (!(v >= 1.0) || v != std::floor(v)) throw ValidationError("--sweep-d values must be positive integers");
  } else {
    cfg.param = SweepParam::Eps;
    cfg.sweep = c.sweep_eps;
    if (cfg.method.d == 0 && cfg.method.method != "jlt") cfg.method.d = cfg.spec.d;
    for (double v : cfg.sweep)
      if (!(v > 0.0)) throw ValidationError("--sweep-eps values must be positive");
  }
  cfg.seeds = c.seeds.value_or(10);
  if (!c.slope_range.empty() && c.slope_range.size() != 2)
    throw ValidationError("--slope-range takes two values: lo,hi");
  check_outputs({c.config}, {c.csv, c.json_out});

  const StudyResult r = scaling_study(cfg);
  ordered_json j = to_json(r);
  bool pass = true;
  if (c.require_monotone) {
    const bool mono = non_increasing(r.median_max_node_err) && non_increasing(r.median_max_abs_log_ratio);
    j["checks"]["monotone"] = mono;
    pass = pass && mono;
  }
  if (!c.slope_range.empty()) {
    const bool ok = r.slope && *r.slope >= c.slope_range[0] && *r.slope <= c.slope_range[1];
    j["checks"]["slope_in_range"] = ok;
    pass = pass && ok;
  }
  const std::string csv = study_csv(r);
  if (!c.json_out.empty()) write_text_file(c.json_out, dump(j));
  emit(csv, c.csv, out);
  return pass ? kExitOk : kExitTolerance;
}

inline void error_json(std::ostream& err, const std::string& kind, const std::string& message) {
  err << ordered_json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace detail

/// Builds the parser; options bind into cfg. Exposed for help-text tests.
inline std::unique_ptr<CLI::App> make_app(RunConfig& cfg) {
  auto app = std::make_unique<CLI::App>("Graph transformer hidden-dimension compression toolkit", "gtc");
  app->require_subcommand(1);
  app->set_help_all_flag("--help-all", "Print help for every subcommand");

  auto io_opts = [&](CLI::App* s, bool model_input) {
    s->add_option("--config", cfg.config, "JSON file of option values; command-line flags win")
        ->check(CLI::ExistingFile);
    if (model_input) s->add_option("--model", cfg.model, "Model JSON file");
    s->add_option("--features", cfg.features, "Node feature table, one row per node");
    s->add_option("--graph", cfg.graph, "Attention edge list, one \"i j\" pair per line");
  };
  auto method_opts = [&](CLI::App* s) {
    s->add_option("--method", cfg.method, "Compression method")
        ->check(CLI::IsMember({"jlt", "exact", "lowrank", "leverage", "cluster"}));
    s->add_option("--d", cfg.d, "Compressed hidden width");
    s->add_option("--eps", cfg.eps, "Target error (jlt width, cluster spread bound)");
    s->add_option("--k", cfg.k, "Leverage rows (default 4*ceil(d ln d))");
    s->add_option("--jl-c", cfg.jl_c, "JL dimension constant c in d = c ln n / eps^2 (default 8)");
    s->add_option("--seed", cfg.seed, "Random seed; required by jlt, leverage and cluster");
    s->add_option("--entry", cfg.entry, "Cluster first-layer entry")->check(CLI::IsMember({"jl", "lowrank"}));
    s->add_flag("--identity-maps", cfg.identity_maps, "jlt debug mode: identity projections (needs d = D)");
    s->add_option("--iterations", cfg.iterations, "k-means iterations for cluster (default 100)");
    s->add_option("--rank-tol", cfg.rank_tol, "Relative rank tolerance for exact (default 1e-9)");
  };
  auto instance_opts = [&](CLI::App* s) {
    s->add_option("--kind", cfg.kind, "Instance generator")
        ->check(CLI::IsMember({"near-lowrank", "clustered", "counterexample", "generic"}));
    s->add_option("--n", cfg.n, "Node count");
    s->add_option("--D", cfg.D, "Reference hidden width");
    s->add_option("--d-in", cfg.d_in, "Input feature width (default D)");
    s->add_option("--L", cfg.L, "Layer count");
    s->add_option("--beta", cfg.beta, "Operator norm of every weight matrix");
    s->add_option("--alpha", cfg.alpha, "Squared feature norm bound");
    s->add_option("--degree", cfg.degree, "Random out-neighbors per node");
    s->add_option("--clusters", cfg.clusters, "Cluster count for clustered instances (default d)");
  };

  auto* fwd = app->add_subcommand("forward", "Run a model and print the output embeddings");
  io_opts(fwd, true);
  fwd->add_option("--out", cfg.out, "Output feature table (default stdout)");

  auto* comp = app->add_subcommand("compress", "Build a compressed model");
  io_opts(comp, true);
  method_opts(comp);
  comp->add_option("--out", cfg.out, "Compressed model JSON file");

  auto* ver = app->add_subcommand("verify", "Compare a compressed model against its reference");
  ver->add_option("--config", cfg.config, "JSON file of option values; command-line flags win")
      ->check(CLI::ExistingFile);
  ver->add_option("--ref", cfg.ref, "Reference model JSON file");
  ver->add_option("--compressed", cfg.compressed, "Compressed model JSON file");
  ver->add_option("--features", cfg.features, "Node feature table, one row per node");
  ver->add_option("--graph", cfg.graph, "Attention edge list, one \"i j\" pair per line");
  ver->add_option("--tolerances", cfg.tolerances, "Tolerance JSON file (\"verify\" block)");
  ver->add_option("--max-node-err", cfg.max_node_err, "Fail (exit 2) above this node error");
  ver->add_option("--max-log-ratio", cfg.max_log_ratio, "Fail (exit 2) above this |log a/a_hat|");
  ver->add_option("--out", cfg.out, "Report JSON file (default stdout)");

  auto* nrm = app->add_subcommand("norms", "Operator and vector norm audit");
  io_opts(nrm, true);
  nrm->add_option("--out", cfg.out, "Report JSON file (default stdout)");

  auto* syn = app->add_subcommand("synth", "Generate a synthetic instance with ground truth");
  syn->add_option("--config", cfg.config, "JSON file of option values; command-line flags win")
      ->check(CLI::ExistingFile);
  instance_opts(syn);
  syn->add_option("--d", cfg.d, "True rank or cluster budget");
  syn->add_option("--eps", cfg.eps, "Noise level or cluster spread");
  syn->add_option("--seed", cfg.seed, "Random seed (required)");
  syn->add_option("--out-dir", cfg.out_dir, "Directory for model.json, features.txt, graph.txt, truth.json");

  auto* st = app->add_subcommand("study", "Scaling study over synthetic instances");
  st->add_option("--config", cfg.config, "JSON file of option values; command-line flags win")
      ->check(CLI::ExistingFile);
  method_opts(st);
  instance_opts(st);
  st->add_option("--rank", cfg.rank, "Instance rank or cluster budget (default --d)");
  st->add_option("--noise", cfg.noise, "Instance noise when sweeping d");
  st->add_option("--instance-seed", cfg.instance_seed, "First instance seed (default 0)");
  st->add_option("--sweep-d", cfg.sweep_d, "Comma-separated widths")->delimiter(',');
  st->add_option("--sweep-eps", cfg.sweep_eps, "Comma-separated noise levels")->delimiter(',');
  st->add_option("--seeds", cfg.seeds, "Runs per sweep point (default 10)");
  st->add_option("--slope-range", cfg.slope_range, "Fail (exit 2) unless the eps slope is in lo,hi")
      ->delimiter(',');
  st->add_flag("--require-monotone", cfg.require_monotone, "Fail (exit 2) unless medians are non-increasing");
  st->add_option("--csv", cfg.csv, "Study CSV file (default stdout)");
  st->add_option("--json", cfg.json_out, "Study JSON file");
  return app;
}

/// Parses argv, runs one subcommand and maps errors to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig cfg;
  auto app = make_app(cfg);
  try {
    try {
      app->parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app->help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app->help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      detail::error_json(err, "validation", e.what());
      return kExitValidation;
    }
    CLI::App* sub = app->get_subcommands().front();
    if (!cfg.config.empty()) detail::merge_config(*sub, cfg.config);
    const std::string name = sub->get_name();
    if (name == "forward") return detail::cmd_forward(cfg, out);
    if (name == "compress") return detail::cmd_compress(cfg, out);
    if (name == "verify") return detail::cmd_verify(cfg, out);
    if (name == "norms") return detail::cmd_norms(cfg, out);
    if (name == "synth") return detail::cmd_synth(cfg, out);
    return detail::cmd_study(cfg, out);
  } catch (const IoError& e) {
    detail::error_json(err, e.kind(), e.what());
    return kExitIo;
  } catch (const Error& e) {
    detail::error_json(err, e.kind(), e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    detail::error_json(err, "internal", e.what());
    return kExitValidation;
  }
}

}  // namespace gtc::cli
