#pragma once

// Reference-vs-compressed comparison, method dispatch, scaling studies and
// the norm report.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gtc/cluster.hpp"
#include "gtc/error.hpp"
#include "gtc/graph.hpp"
#include "gtc/jlt.hpp"
#include "gtc/lowrank.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/synth.hpp"
#include "gtc/transformer.hpp"

namespace gtc {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------- statistics

/// Linear-interpolation quantile (q in [0, 1]) of an unsorted sample.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("slope fit needs two or more points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) throw ValidationError("slope fit needs positive values");
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    num += (std::log(x[k]) - mx) * (std::log(y[k]) - my);
    den += (std::log(x[k]) - mx) * (std::log(x[k]) - mx);
  }
  if (den == 0.0) throw ValidationError("slope fit needs distinct x values");
  return num / den;
}

// ---------------------------------------------------------------- compare

struct RatioStats {
  std::size_t edges = 0;
  double min = 1.0;  ///< min a/â
  double max = 1.0;  ///< max a/â
  double max_abs_log = 0.0;
};

struct Tolerances {
  std::optional<double> max_node_err;
  std::optional<double> max_abs_log_ratio;
};

struct ErrorReport {
  std::string method;
  ordered_json params = ordered_json::object();
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d;
  std::optional<double> eps_target;
  Vector per_node;  ///< ||T(X)_i − U_out·T̂(X)_i||
  std::vector<RatioStats> per_layer_ratios;
  double max_node_err = 0.0;
  double median_node_err = 0.0;
  double max_abs_log_ratio = 0.0;
  ordered_json checks = ordered_json::object();  ///< method-specific verification
  std::optional<bool> pass;                      ///< set when tolerances or checks apply
};

/// Per-layer pass/fail of the method-specific invariants, computed from
/// both traces. Cluster models re-derive their cluster structure from the
/// construction parameters, which is deterministic.
inline ordered_json cluster_checks(const Model& reference, const Model& compressed, const ForwardTrace& ref,
                                   const ForwardTrace& cmp) {
  const auto& p = compressed.params;
  const std::size_t d = compressed.d.value_or(reference.D);
  const auto structure = fit_clusters(ref, d, p.value("iterations", kDefaultKmeansIterations),
                                      p.value("seed", std::uint64_t{0}));
  ordered_json out;
  out["onehot"] = ordered_json::array();
  for (const auto& s : onehot_check(cmp, structure)) {
    out["onehot"].push_back({{"max_positive", s.max_positive},
                             {"off_cluster_max", s.off_cluster_max},
                             {"on_min", s.on_min},
                             {"on_max", s.on_max},
                             {"max_deviation", s.max_deviation},
                             {"wrong_slot", s.wrong_slot}});
  }
  out["pool_closeness"] = ordered_json::array();
  bool pass = true;
  for (const auto& r : attention_pool_closeness(ref, cmp)) {
    pass = pass && r.pass;
    out["pool_closeness"].push_back({{"alpha", r.alpha},
                                     {"max_log_ratio", r.max_log_ratio},
                                     {"value_dot_deviation", r.value_dot_deviation},
                                     {"eps", r.eps},
                                     {"t", r.t},
                                     {"bound", r.bound},
                                     {"max_deviation", r.max_deviation},
                                     {"applicable", r.applicable},
                                     {"pass", r.pass}});
  }
  out["cluster_dots"] = ordered_json::array();
  for (std::size_t l = 0; l < structure.layers.size(); ++l) {
    const auto r = cluster_dot_check(ref.layers[l].H_half, structure.layers[l]);
    pass = pass && r.pass;
    out["cluster_dots"].push_back({{"same_worst", r.same_worst},
                                   {"same_bound", r.same_bound},
                                   {"cross_worst", r.cross_worst},
                                   {"cross_bound", r.cross_bound},
                                   {"pass", r.pass}});
  }
  out["pass"] = pass;
  return out;
}

inline ErrorReport compare(const Model& reference, const Model& compressed, const Matrix& X,
                           const AttentionGraph& graph, const Tolerances& tol = {}) {
  if (compressed.d_in != reference.d_in) throw ValidationError("models disagree on d_in");
  if (compressed.L() != reference.L()) throw ValidationError("models have different layer counts");
  const ForwardTrace ref = model_forward(reference, X, graph);
  const ForwardTrace cmp = model_forward(compressed, X, graph);
  Matrix out = cmp.output();
  if (compressed.U_out) out = *compressed.U_out * out;
  if (out.rows() != ref.output().rows()) {
    throw ValidationError("compressed output width " + std::to_string(out.rows()) +
                          " does not match reference width " + std::to_string(ref.output().rows()) +
                          " (missing U_out?)");
  }
  ErrorReport r;
  r.method = compressed.method.empty() ? "reference" : compressed.method;
  r.params = compressed.params.is_null() ? ordered_json::object() : compressed.params;
  if (r.params.contains("seed")) r.seed = r.params["seed"].get<std::uint64_t>();
  r.d = compressed.d;
  if (r.params.contains("eps")) r.eps_target = r.params["eps"].get<double>();
  r.per_node = column_distances(ref.output(), out);
  r.max_node_err = r.per_node.empty() ? 0.0 : *std::max_element(r.per_node.begin(), r.per_node.end());
  r.median_node_err = r.per_node.empty() ? 0.0 : median(r.per_node);
  for (std::size_t l = 0; l < ref.layers.size(); ++l) {
    RatioStats s;
    const auto& a = ref.layers[l].scores;
    const auto& b = cmp.layers[l].scores;
    s.edges = a.size();
    s.min = std::numeric_limits<double>::infinity();
    s.max = 0.0;
    for (std::size_t e = 0; e < a.size(); ++e) {
      const double q = a[e] / b[e];
      s.min = std::min(s.min, q);
      s.max = std::max(s.max, q);
      s.max_abs_log = std::max(s.max_abs_log, std::abs(std::log(q)));
    }
    if (a.empty()) s.min = s.max = 1.0;
    r.max_abs_log_ratio = std::max(r.max_abs_log_ratio, s.max_abs_log);
    r.per_layer_ratios.push_back(s);
  }
  std::optional<bool> pass;
  if (compressed.method == "cluster") {
    r.checks["cluster"] = cluster_checks(reference, compressed, ref, cmp);
    pass = r.checks["cluster"]["pass"].get<bool>();
  }
  if (tol.max_node_err || tol.max_abs_log_ratio) {
    bool ok = true;
    if (tol.max_node_err) ok = ok && r.max_node_err <= *tol.max_node_err;
    if (tol.max_abs_log_ratio) ok = ok && r.max_abs_log_ratio <= *tol.max_abs_log_ratio;
    r.checks["tolerances"] = ordered_json::object();
    if (tol.max_node_err) r.checks["tolerances"]["max_node_err"] = *tol.max_node_err;
    if (tol.max_abs_log_ratio) r.checks["tolerances"]["max_abs_log_ratio"] = *tol.max_abs_log_ratio;
    r.checks["tolerances"]["pass"] = ok;
    pass = pass.value_or(true) && ok;
  }
  r.pass = pass;
  return r;
}

inline ordered_json to_json(const ErrorReport& r) {
  ordered_json j;
  j["method"] = r.method;
  j["params"] = r.params;
  j["seed"] = r.seed ? ordered_json(*r.seed) : ordered_json(nullptr);
  ordered_json s;
  s["max_node_err"] = r.max_node_err;
  s["median_node_err"] = r.median_node_err;
  s["max_abs_log_ratio"] = r.max_abs_log_ratio;
  s["d"] = r.d ? ordered_json(*r.d) : ordered_json(nullptr);
  s["eps_target"] = r.eps_target ? ordered_json(*r.eps_target) : ordered_json(nullptr);
  j["summary"] = s;
  j["per_node"] = r.per_node;
  j["per_layer_ratios"] = ordered_json::array();
  for (std::size_t l = 0; l < r.per_layer_ratios.size(); ++l) {
    const auto& p = r.per_layer_ratios[l];
    j["per_layer_ratios"].push_back(
        {{"layer", l}, {"edges", p.edges}, {"min", p.min}, {"max", p.max}, {"max_abs_log", p.max_abs_log}});
  }
  j["checks"] = r.checks;
  j["pass"] = r.pass ? ordered_json(*r.pass) : ordered_json(nullptr);
  return j;
}

inline ErrorReport report_from_json(const ordered_json& j) {
  try {
    ErrorReport r;
    r.method = j.at("method").get<std::string>();
    r.params = j.at("params");
    if (!j.at("seed").is_null()) r.seed = j["seed"].get<std::uint64_t>();
    const auto& s = j.at("summary");
    r.max_node_err = s.at("max_node_err").get<double>();
    r.median_node_err = s.at("median_node_err").get<double>();
    r.max_abs_log_ratio = s.at("max_abs_log_ratio").get<double>();
    if (!s.at("d").is_null()) r.d = s["d"].get<std::size_t>();
    if (!s.at("eps_target").is_null()) r.eps_target = s["eps_target"].get<double>();
    r.per_node = j.at("per_node").get<Vector>();
    for (const auto& p : j.at("per_layer_ratios")) {
      r.per_layer_ratios.push_back({p.at("edges").get<std::size_t>(), p.at("min").get<double>(),
                                    p.at("max").get<double>(), p.at("max_abs_log").get<double>()});
    }
    r.checks = j.at("checks");
    if (!j.at("pass").is_null()) r.pass = j["pass"].get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& compression_methods() {
  static const std::vector<std::string> m{"jlt", "exact", "lowrank", "leverage", "cluster"};
  return m;
}

inline bool method_is_stochastic(const std::string& method) {
  return method == "jlt" || method == "leverage" || method == "cluster";
}

struct CompressParams {
  std::string method;
  std::size_t d = 0;  ///< 0: derive from eps (jlt only)
  std::optional<double> eps;
  std::size_t k = 0;  ///< leverage rows; 0: 4·ceil(d·ln d)
  double jl_c = kDefaultJlConstant;
  std::optional<std::uint64_t> seed;
  ClusterEntry entry = ClusterEntry::LowrankInput;
  bool identity_maps = false;
  std::size_t iterations = kDefaultKmeansIterations;
  double rank_tol = linalg::kDefaultRankTol;
};

inline std::size_t default_leverage_k(std::size_t d) {
  const double dd = static_cast<double>(d);
  return std::max<std::size_t>(d, 4 * static_cast<std::size_t>(std::ceil(dd * std::log(dd))));
}

inline ordered_json to_json(const ClusterStructure& s) {
  ordered_json layers = ordered_json::array();
  for (const auto& lc : s.layers) {
    layers.push_back({{"clusters", lc.count()},
                      {"gamma1", lc.gamma1},
                      {"gamma2", lc.gamma2},
                      {"max_pair_dot", lc.max_pair_dot},
                      {"eps_cl", lc.eps_cl},
                      {"assignment", lc.assignment}});
  }
  return layers;
}

struct CompressResult {
  Model model;
  ordered_json report = ordered_json::object();  ///< method-specific construction details
};

/// Runs the named construction. Stochastic methods require a seed.
inline CompressResult compress_detailed(const Model& model, const Matrix& X, const AttentionGraph& graph,
                                        const CompressParams& p) {
  const auto& all = compression_methods();
  if (std::find(all.begin(), all.end(), p.method) == all.end())
    throw ValidationError("unknown method '" + p.method + "'");
  if (method_is_stochastic(p.method) && !p.seed && !(p.method == "jlt" && p.identity_maps))
    throw ValidationError("method " + p.method + " needs an explicit seed");
  const std::uint64_t seed = p.seed.value_or(0);
  std::size_t d = p.d;
  if (p.method == "jlt") {
    if (d == 0) {
      if (!p.eps) throw ValidationError("jlt needs --d or --eps");
      d = jl_dim(X.cols(), *p.eps, p.jl_c, model.D);
    }
    Model out = compress_attention_jlt(model, d, seed, p.identity_maps);
    if (p.eps) out.params["eps"] = *p.eps;
    if (p.eps) out.params["jl_c"] = p.jl_c;
    return {std::move(out)};
  }
  if (d == 0) throw ValidationError("method " + p.method + " needs --d");
  if (p.method == "exact") return {exact_compress(model, X, graph, d, p.rank_tol)};
  if (p.method == "lowrank") return {approx_compress(model, X, graph, d).model};
  if (p.method == "leverage") {
    return {leverage_compress(model, X, graph, d, p.k ? p.k : default_leverage_k(d), seed).model};
  }
  if (!p.eps) throw ValidationError("cluster needs --eps");
  ClusterOptions o;
  o.entry = p.entry;
  o.eps = *p.eps;
  o.jl_c = p.jl_c;
  o.seed = seed;
  o.iterations = p.iterations;
  ClusterCompression c = cluster_compress(model, X, graph, d, o);
  CompressResult out{std::move(c.model)};
  out.report["layers"] = to_json(c.structure);
  out.report["representatives"] = c.representatives;
  return out;
}

inline Model compress_model(const Model& model, const Matrix& X, const AttentionGraph& graph,
                            const CompressParams& p) {
  return compress_detailed(model, X, graph, p).model;
}

// ---------------------------------------------------------------- studies

/// Worker count: GTC_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("GTC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Evaluates job(0..count-1) with at most worker_count() in flight; results
/// keep index order regardless of scheduling.
template <class Fn>
auto parallel_map(std::size_t count, Fn job) -> std::vector<decltype(job(std::size_t{}))> {
  using R = decltype(job(std::size_t{}));
  std::vector<R> out;
  out.reserve(count);
  const std::size_t width = worker_count();
  for (std::size_t start = 0; start < count; start += width) {
    std::vector<std::future<R>> batch;
    const std::size_t stop = std::min(count, start + width);
    for (std::size_t i = start; i < stop; ++i) {
      if (width == 1) {
        out.push_back(job(i));
      } else {
        batch.push_back(std::async(std::launch::async, job, i));
      }
    }
    for (auto& f : batch) out.push_back(f.get());
  }
  return out;
}

enum class SweepParam { D, Eps };

struct StudyConfig {
  CompressParams method;  ///< d/eps are overridden by the sweep value
  SynthSpec spec;
  SweepParam param = SweepParam::D;
  std::vector<double> sweep;
  std::size_t seeds = 10;
  std::vector<double> quantiles{0.0, 0.25, 0.5, 0.75, 1.0};
};

struct StudyRun {
  double value = 0.0;
  std::uint64_t seed = 0;
  double max_node_err = 0.0;
  double median_node_err = 0.0;
  double max_abs_log_ratio = 0.0;
};

struct StudyRow {
  double value = 0.0;
  double quantile = 0.0;
  double max_node_err = 0.0;
  double max_abs_log_ratio = 0.0;
};

struct StudyResult {
  StudyConfig config;
  std::vector<StudyRun> runs;  ///< sweep-major, then seed
  std::vector<StudyRow> rows;
  std::vector<double> median_max_node_err;  ///< per sweep point
  std::vector<double> median_max_abs_log_ratio;
  std::optional<double> slope;  ///< log-log slope of median error vs eps
  std::vector<double> ratio_constant;  ///< per seed: max over sweep of max|log ratio| / eps
};

inline std::string to_string(SweepParam p) { return p == SweepParam::D ? "d" : "eps"; }

/// Stochastic methods keep the instance fixed and vary the construction
/// seed; deterministic methods vary the instance seed instead.
inline StudyRun study_run(const StudyConfig& cfg, double value, std::uint64_t s) {
  SynthSpec spec = cfg.spec;
  CompressParams p = cfg.method;
  const bool stochastic = method_is_stochastic(p.method);
  if (!stochastic) spec.seed = cfg.spec.seed + s;
  p.seed = p.seed.value_or(0) + (stochastic ? s : 0);
  if (cfg.param == SweepParam::D) {
    p.d = static_cast<std::size_t>(value);
  } else {
    spec.eps = value;
    p.eps = value;
  }
  const SynthInstance inst = synth(spec);
  if (p.method == "cluster") p.eps = std::max(inst.truth.eps, p.eps.value_or(0.0));
  const Model c = compress_model(inst.model, inst.X, inst.graph, p);
  const ErrorReport r = compare(inst.model, c, inst.X, inst.graph);
  return {value, s, r.max_node_err, r.median_node_err, r.max_abs_log_ratio};
}

inline StudyResult scaling_study(const StudyConfig& cfg) {
  if (cfg.sweep.empty()) throw ValidationError("sweep must not be empty");
  if (cfg.seeds < 1) throw ValidationError("study needs at least one seed");
  StudyResult res;
  res.config = cfg;
  const std::size_t total = cfg.sweep.size() * cfg.seeds;
  res.runs = parallel_map(total, [&](std::size_t job) {
    return study_run(cfg, cfg.sweep[job / cfg.seeds], static_cast<std::uint64_t>(job % cfg.seeds));
  });
  for (std::size_t k = 0; k < cfg.sweep.size(); ++k) {
    std::vector<double> err;
    std::vector<double> lr;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      err.push_back(res.runs[k * cfg.seeds + s].max_node_err);
      lr.push_back(res.runs[k * cfg.seeds + s].max_abs_log_ratio);
    }
    for (double q : cfg.quantiles) res.rows.push_back({cfg.sweep[k], q, quantile(err, q), quantile(lr, q)});
    res.median_max_node_err.push_back(median(err));
    res.median_max_abs_log_ratio.push_back(median(lr));
  }
  if (cfg.param == SweepParam::Eps && cfg.sweep.size() >= 2) {
    const bool positive = std::all_of(res.median_max_node_err.begin(), res.median_max_node_err.end(),
                                      [](double v) { return v > 0.0; });
    if (positive) res.slope = loglog_slope(cfg.sweep, res.median_max_node_err);
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      double K = 0.0;
      for (std::size_t k = 0; k < cfg.sweep.size(); ++k)
        K = std::max(K, res.runs[k * cfg.seeds + s].max_abs_log_ratio / cfg.sweep[k]);
      res.ratio_constant.push_back(K);
    }
  }
  return res;
}

/// Shortest representation that round-trips.
inline std::string format_number(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string study_csv(const StudyResult& r) {
  std::string out = "method,param,value,quantile,max_node_err,max_abs_log_ratio\n";
  for (const auto& row : r.rows) {
    out += r.config.method.method + "," + to_string(r.config.param) + "," + format_number(row.value) + "," +
           format_number(row.quantile) + "," + format_number(row.max_node_err) + "," +
           format_number(row.max_abs_log_ratio) + "\n";
  }
  return out;
}

inline ordered_json to_json(const StudyResult& r) {
  ordered_json j;
  j["method"] = r.config.method.method;
  j["instance"] = {{"kind", to_string(r.config.spec.kind)}, {"n", r.config.spec.n},    {"D", r.config.spec.D},
                   {"d_in", r.config.spec.input_dim()},     {"L", r.config.spec.L},    {"d", r.config.spec.d},
                   {"eps", r.config.spec.eps},               {"seed", r.config.spec.seed},
                   {"beta", r.config.spec.beta},             {"alpha", r.config.spec.alpha},
                   {"degree", r.config.spec.degree}};
  j["param"] = to_string(r.config.param);
  j["sweep"] = r.config.sweep;
  j["seeds"] = r.config.seeds;
  j["median_max_node_err"] = r.median_max_node_err;
  j["median_max_abs_log_ratio"] = r.median_max_abs_log_ratio;
  j["slope"] = r.slope ? ordered_json(*r.slope) : ordered_json(nullptr);
  j["ratio_constant"] = r.ratio_constant;
  j["rows"] = ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"value", row.value},
                         {"quantile", row.quantile},
                         {"max_node_err", row.max_node_err},
                         {"max_abs_log_ratio", row.max_abs_log_ratio}});
  }
  j["runs"] = ordered_json::array();
  for (const auto& run : r.runs) {
    j["runs"].push_back({{"value", run.value},
                         {"seed", run.seed},
                         {"max_node_err", run.max_node_err},
                         {"median_node_err", run.median_node_err},
                         {"max_abs_log_ratio", run.max_abs_log_ratio}});
  }
  return j;
}

inline bool non_increasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[k - 1]) return false;
  return true;
}

// ---------------------------------------------------------------- norms

/// Norm audit report: operator norms per layer and family, "mean ± std"
/// summaries, and layer-input vector norms.
inline ordered_json norm_report(const Model& model, const Matrix& X, const AttentionGraph& graph) {
  const ForwardTrace trace = model_forward(model, X, graph);
  const NormAudit a = audit_norms(model, trace);
  ordered_json j;
  j["L"] = model.L();
  j["operator_norm"] = format_mean_std(a.operator_norm);
  j["vector_norm"] = format_mean_std(a.vector_norm);
  j["operator_norm_mean"] = a.operator_norm.mean;
  j["operator_norm_std"] = a.operator_norm.std;
  j["vector_norm_mean"] = a.vector_norm.mean;
  j["vector_norm_std"] = a.vector_norm.std;
  j["beta_estimate"] = a.beta_estimate;
  j["alpha_estimate"] = a.alpha_estimate;
  const char* names[] = {"W_V", "W_Q", "W_K", "W_1", "W_2"};
  ordered_json fam;
  for (int f = 0; f < 5; ++f) {
    std::vector<double> xs;
    for (const auto& w : a.weights) {
      const double vals[] = {w.W_V, w.W_Q, w.W_K, w.W_1, w.W_2};
      xs.push_back(vals[f]);
    }
    fam[names[f]] = format_mean_std(mean_std(xs));
  }
  j["families"] = fam;
  j["layers"] = ordered_json::array();
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    const auto& w = a.weights[l];
    j["layers"].push_back({{"W_V", w.W_V},
                           {"W_Q", w.W_Q},
                           {"W_K", w.W_K},
                           {"W_1", w.W_1},
                           {"W_2", w.W_2},
                           {"max_input_norm", a.max_input_norm[l]},
                           {"mean_input_norm", a.mean_input_norm[l]}});
  }
  return j;
}

}  // namespace gtc
