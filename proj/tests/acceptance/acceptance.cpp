// Acceptance run: one PASS/FAIL line per criterion. Thresholds come from
// data/tolerances.json; exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "gtc/gtc.hpp"
#include "support.hpp"

namespace {

using namespace gtc;
using json = ordered_json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <class T>
std::vector<T> list(const json& j) {
  return j.get<std::vector<T>>();
}

double max_of(const Vector& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

// 1 -------------------------------------------------------------------------
Outcome oracle_equivalence(const json& t) {
  const auto count = t["instances"].get<std::uint64_t>();
  const auto max_n = t["max_n"].get<std::size_t>();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < count; ++seed) {
    Rng rng(0xacce55 + seed);
    const std::size_t n = 2 + rng() % (max_n - 1);
    const std::size_t d_in = 1 + rng() % 8;
    const std::size_t D = 1 + rng() % 16;
    const std::size_t L = 1 + rng() % 3;
    auto [m, gen] = random_model(d_in, D, L, seed, 0.5 + static_cast<double>(rng() % 4) * 0.5, 1.0);
    m.use_sqrt_d = seed % 2 == 0;
    if (seed % 3 == 0) m.layers[0].b_1 = gaussian_vector(D, rng);
    const auto g = seed % 5 == 0 ? AttentionGraph::full(n) : testing::random_graph(n, 4, rng);
    const Matrix X = gen(n);
    worst = std::max(worst, max_abs_diff(model_forward(m, X, g).output(), testing::dense_masked_forward(m, X, g)));
  }
  return {worst <= t["max_abs_diff"].get<double>(),
          "max |sparse - dense| = " + fmt("%.2e", worst) + " over " + std::to_string(count) + " instances"};
}

// 2 -------------------------------------------------------------------------
Outcome exact_compression(const json& t) {
  double err = 0.0;
  double lr = 0.0;
  for (auto d : list<std::size_t>(t["d"])) {
    SynthSpec s;
    s.kind = SynthKind::NearLowrank;
    s.n = t["n"];
    s.D = t["D"];
    s.L = t["L"];
    s.d = d;
    s.seed = 100 + d;
    const auto inst = synth(s);
    CompressParams p;
    p.method = "exact";
    p.d = d;
    const auto r = compare(inst.model, compress_model(inst.model, inst.X, inst.graph, p), inst.X, inst.graph);
    err = std::max(err, r.max_node_err);
    lr = std::max(lr, r.max_abs_log_ratio);
  }
  return {err <= t["max_node_err"].get<double>() && lr <= t["max_abs_log_ratio"].get<double>(),
          "max node err " + fmt("%.2e", err) + ", max |log ratio| " + fmt("%.2e", lr)};
}

// 3 -------------------------------------------------------------------------
Outcome jlt_trend(const json& t) {
  StudyConfig cfg;
  cfg.method.method = "jlt";
  cfg.method.seed = 0;
  cfg.spec.kind = SynthKind::Generic;
  cfg.spec.n = t["n"];
  cfg.spec.D = t["D"];
  cfg.spec.L = t["L"];
  cfg.spec.beta = t["beta"];
  cfg.spec.alpha = t["alpha"];
  cfg.spec.degree = t["degree"];
  cfg.spec.seed = 3;
  cfg.param = SweepParam::D;
  cfg.sweep = list<double>(t["d"]);
  cfg.seeds = t["seeds"];
  const StudyResult r = scaling_study(cfg);

  const auto inst = synth(cfg.spec);
  CompressParams id;
  id.method = "jlt";
  id.d = cfg.spec.D;
  id.identity_maps = true;
  const auto ident = compare(inst.model, compress_model(inst.model, inst.X, inst.graph, id), inst.X, inst.graph);

  const bool mono = non_increasing(r.median_max_node_err) && non_increasing(r.median_max_abs_log_ratio);
  std::string detail = "median err";
  for (double v : r.median_max_node_err) detail += " " + fmt("%.3g", v);
  detail += "; median |log ratio|";
  for (double v : r.median_max_abs_log_ratio) detail += " " + fmt("%.3g", v);
  detail += "; identity err " + fmt("%.1e", ident.max_node_err);
  return {mono && ident.max_node_err <= t["identity_max_err"].get<double>(), detail};
}

// 4 -------------------------------------------------------------------------
Outcome lowrank_scaling(const json& t) {
  StudyConfig cfg;
  cfg.method.method = "lowrank";
  cfg.method.d = t["d"];
  cfg.spec.kind = SynthKind::NearLowrank;
  cfg.spec.n = t["n"];
  cfg.spec.D = t["D"];
  cfg.spec.L = t["L"];
  cfg.spec.d = t["d"];
  cfg.param = SweepParam::Eps;
  cfg.sweep = list<double>(t["eps"]);
  cfg.seeds = t["seeds"];
  const StudyResult r = scaling_study(cfg);
  const auto range = list<double>(t["slope"]);
  const double slope = r.slope.value_or(std::nan(""));
  const double Kmed = median(r.ratio_constant);
  const auto [kmin, kmax] = std::minmax_element(r.ratio_constant.begin(), r.ratio_constant.end());
  const double spread = t["k_spread"].get<double>();
  const bool stable = *kmin >= (1.0 - spread) * Kmed && *kmax <= (1.0 + spread) * Kmed;
  // Per seed, how far |log ratio|/eps moves across the sweep (linearity).
  double drift = 0.0;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    double lo = INFINITY;
    double hi = 0.0;
    for (std::size_t k = 0; k < cfg.sweep.size(); ++k) {
      const double v = r.runs[k * cfg.seeds + s].max_abs_log_ratio / cfg.sweep[k];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    drift = std::max(drift, hi / lo - 1.0);
  }
  return {slope >= range[0] && slope <= range[1] && stable,
          "slope " + fmt("%.3f", slope) + "; K median " + fmt("%.3f", Kmed) + " range [" + fmt("%.3f", *kmin) +
              ", " + fmt("%.3f", *kmax) + "] = [" + fmt("%.2f", *kmin / Kmed) + ", " + fmt("%.2f", *kmax / Kmed) +
              "] x median across seeds; within-seed drift across eps " + fmt("%.1f%%", 100 * drift)};
}

// 5 -------------------------------------------------------------------------
Outcome coverage(const json& t) {
  const std::size_t rank = t["rank"];
  const double noise = t["noise"];
  const std::size_t k = 4 * static_cast<std::size_t>(std::ceil(static_cast<double>(rank) * std::log(double(rank))));
  const auto seeds = t["seeds"].get<std::uint64_t>();
  const double mult = t["multiplier"];
  struct Run {
    double fraction;
    double control;
  };
  const auto runs = parallel_map(seeds, [&](std::size_t s) {
    Rng rng(5000 + s);
    const auto [h, bar] = near_lowrank_matrix(t["D"].get<std::size_t>(), t["n"].get<std::size_t>(), rank, noise, rng);
    return Run{leverage_coverage(h, rank, k, noise, s, mult).fraction,
               leverage_coverage(h, rank, t["control_k"].get<std::size_t>(), noise, s, mult).fraction};
  });
  std::size_t good = 0;
  double control = 0.0;
  double lowest = 1.0;
  for (const auto& r : runs) {
    if (r.fraction >= t["min_fraction"].get<double>()) ++good;
    lowest = std::min(lowest, r.fraction);
    control = std::max(control, r.control);
  }
  const double share = static_cast<double>(good) / static_cast<double>(seeds);
  return {share >= t["min_seed_share"].get<double>() && control < t["control_max_fraction"].get<double>(),
          "k=" + std::to_string(k) + ": " + std::to_string(good) + "/" + std::to_string(seeds) +
              " seeds cover >= 0.9 (lowest " + fmt("%.3f", lowest) + "); k=1 control max " + fmt("%.3f", control)};
}

// 6 -------------------------------------------------------------------------
Outcome onehot(const json& t) {
  bool pass = true;
  std::string detail;
  for (double eps : list<double>(t["eps_cl"])) {
    SynthSpec s;
    s.kind = SynthKind::Clustered;
    s.n = t["n"];
    s.D = t["D"];
    s.L = t["L"];
    s.d = t["d"];
    s.eps = eps;
    s.seed = 21;
    const auto inst = synth(s);
    const auto ref = model_forward(inst.model, inst.X, inst.graph);
    const auto structure = fit_clusters(ref, s.d, kDefaultKmeansIterations, 1);
    const bool separated = validate_separation(structure, inst.truth.eps * (1 + 1e-9) + 1e-12).pass;
    ClusterOptions o;
    o.eps = inst.truth.eps * (1 + 1e-9) + 1e-12;
    o.seed = 1;
    const auto c = cluster_compress(inst.model, inst.X, inst.graph, s.d, o);
    const auto stats = onehot_check(model_forward(c.model, inst.X, inst.graph), c.structure);
    double off = 0.0;
    double dev = 0.0;
    std::size_t wrong = 0;
    for (const auto& st : stats) {
      off = std::max(off, st.off_cluster_max);
      dev = std::max(dev, st.max_deviation);
      wrong += st.wrong_slot;
    }
    const auto r = compare(inst.model, c.model, inst.X, inst.graph);
    bool ok = separated && off == 0.0 && wrong == 0;
    detail += (detail.empty() ? "" : "; ") + std::string("eps_cl ") + fmt("%g", eps) + ": off-cluster max " +
              fmt("%g", off);
    if (eps > 0.0) {
      const double K = dev / inst.truth.eps;
      ok = ok && K <= t["max_K"].get<double>();
      detail += ", K " + fmt("%.2f", K);
    } else {
      ok = ok && dev <= t["float_floor"].get<double>() && r.max_node_err <= t["exact_max_err"].get<double>();
      detail += ", deviation " + fmt("%.1e", dev) + ", end-to-end err " + fmt("%.1e", r.max_node_err);
    }
    if (!separated) detail += " (separation failed)";
    pass = pass && ok;
  }
  return {pass, detail};
}

// 7 -------------------------------------------------------------------------
Outcome counterexample(const json& t) {
  SynthSpec s;
  s.kind = SynthKind::Counterexample;
  s.n = s.D = t["D"];
  s.eps = t["eps"];
  const auto inst = synth(s);
  const double proj = max_of(lift_column_errors(lowrank_lift(inst.X, 1, LiftKind::Projection).pair, inst.X));
  const double rows = max_of(lift_column_errors(lowrank_lift(inst.X, 1, LiftKind::RowSelection).pair, inst.X));
  return {rows >= t["min_ratio"].get<double>() * proj,
          "row selection " + fmt("%.4f", rows) + " vs projection " + fmt("%.4f", proj) + " (ratio " +
              fmt("%.1f", rows / proj) + ")"};
}

// 8 -------------------------------------------------------------------------
Outcome norm_audit(const json& t, const json& sample) {
  const double beta = t["beta"];
  const double tol = t["tol"];
  auto [m, gen] = random_model(t["D"], t["D"], t["L"], 8, beta, 1.0);
  const std::size_t n = t["n"];
  const Matrix X = gen(n);
  const auto trace = model_forward(m, X, random_neighbor_graph(n, 5, 2));
  const NormAudit a = audit_norms(m, trace);
  double worst_beta = 0.0;
  double worst_oracle = 0.0;
  for (std::size_t l = 0; l < m.L(); ++l) {
    const auto& w = a.weights[l];
    const auto& layer = m.layers[l];
    const double got[] = {w.W_V, w.W_Q, w.W_K, w.W_1, w.W_2};
    const Matrix* mats[] = {&layer.W_V, &layer.W_Q, &layer.W_K, &layer.W_1, &layer.W_2};
    for (int f = 0; f < 5; ++f) {
      worst_beta = std::max(worst_beta, std::abs(got[f] - beta));
      worst_oracle = std::max(worst_oracle, std::abs(got[f] - testing::oracle_spectral_norm(*mats[f])));
    }
  }
  const std::string op = format_mean_std({sample["operator_norm"]["mean"], sample["operator_norm"]["std"]});
  const std::string vec = format_mean_std({sample["vector_norm"]["mean"], sample["vector_norm"]["std"]});
  const bool rendered = op == sample["expected_rendering"]["operator_norm"].get<std::string>() &&
                        vec == sample["expected_rendering"]["vector_norm"].get<std::string>();
  return {worst_beta <= tol && worst_oracle <= tol && rendered,
          "max |norm - beta| " + fmt("%.1e", worst_beta) + ", max |norm - SVD oracle| " + fmt("%.1e", worst_oracle) +
              "; report \"" + format_mean_std(a.operator_norm) + "\"; sample \"" + op + "\" / \"" + vec + "\""};
}

// 9 -------------------------------------------------------------------------
int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  testing::TempDir tmp;
  const std::string cli = GTC_CLI_PATH;
  const auto path = [&](const std::string& name) { return (tmp / name).string(); };
  std::vector<std::string> failures;
  std::size_t compared = 0;
  // Both runs write the same paths; stdout plus the written files are compared.
  const std::string near = path("near");
  const std::string clus = path("clus");
  const auto io = [&](const std::string& dir) {
    return " --model " + dir + "/model.json --features " + dir + "/features.txt --graph " + dir + "/graph.txt";
  };
  if (shell(cli + " synth --kind near-lowrank --n 120 --D 32 --L 2 --d 4 --eps 0.01 --seed 4 --out-dir " + near +
            " > /dev/null") != 0 ||
      shell(cli + " synth --kind clustered --n 120 --D 32 --L 2 --d 4 --eps 0.01 --seed 4 --out-dir " + clus +
            " > /dev/null") != 0)
    return {false, "synth failed"};
  const double cl_eps = json::parse(read_text_file(clus + "/truth.json"))["eps"].get<double>() * 1.001;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "synth --kind clustered --n 80 --D 16 --L 2 --d 3 --eps 0.02 --seed 9 --out-dir " + path("s") +
                    " > /dev/null && cat " + path("s") + "/model.json " + path("s") + "/features.txt " +
                    path("s") + "/graph.txt " + path("s") + "/truth.json"},
      {"compress-jlt", "compress --method jlt --d 8 --seed 7" + io(near) + " --out " + path("j.json") +
                           " && cat " + path("j.json")},
      {"compress-leverage", "compress --method leverage --d 4 --seed 7" + io(near) + " --out " + path("l.json") +
                                " && cat " + path("l.json")},
      {"compress-cluster", "compress --method cluster --d 4 --entry lowrank --eps " + fmt("%.17g", cl_eps) +
                               " --seed 7" + io(clus) + " --out " + path("c.json") + " && cat " +
                               path("c.json")},
      {"verify", "verify --ref " + near + "/model.json --compressed " + path("j.json") + " --features " + near +
                     "/features.txt --graph " + near + "/graph.txt"},
      {"study", "study --method jlt --seed 5 --n 60 --D 16 --L 2 --sweep-d 4,8,16 --seeds 6 --json " +
                    path("st.json") + " && cat " + path("st.json")},
  };
  for (const auto& [label, tmpl] : commands) {
    std::string outputs[2];
    for (int run = 0; run < 2; ++run) {
      const std::string& cmd = tmpl;
      const std::string out = path(label + "_" + std::to_string(run) + ".out");
      const std::string threads = run == 0 ? "GTC_THREADS=1 " : "GTC_THREADS=4 ";
      if (shell(threads + "sh -c '" + cli + " " + cmd + "' > " + out + " 2>&1") != 0) {
        failures.push_back(label + " (exit)");
        break;
      }
      outputs[run] = read_text_file(out);
    }
    if (outputs[0].empty() || outputs[0] != outputs[1]) {
      failures.push_back(label);
    } else {
      ++compared;
    }
  }
  std::string detail = std::to_string(compared) + "/" + std::to_string(commands.size()) +
                       " subcommands byte-identical across repeated runs (GTC_THREADS 1 vs 4)";
  for (const auto& f : failures) detail += "; differs: " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string data_dir = argc > 1 ? argv[1] : GTC_DATA_DIR;
  json tol;
  json sample;
  try {
    tol = json::parse(read_text_file(data_dir + "/tolerances.json"));
    sample = json::parse(read_text_file(data_dir + "/norm_sample.json"));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load acceptance data: %s\n", e.what());
    return 3;
  }
  const json& a = tol["acceptance"];
  std::printf("acceptance run, tolerance file version %d, %zu worker(s)\n", tol["version"].get<int>(),
              worker_count());

  struct Criterion {
    const char* name;
    const json* cfg;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {"oracle-equivalence", &a["oracle"], [&] { return oracle_equivalence(a["oracle"]); }},
      {"exact-compression", &a["exact"], [&] { return exact_compression(a["exact"]); }},
      {"jlt-trend", &a["jlt_trend"], [&] { return jlt_trend(a["jlt_trend"]); }},
      {"lowrank-eps-scaling", &a["lowrank_scaling"], [&] { return lowrank_scaling(a["lowrank_scaling"]); }},
      {"leverage-coverage", &a["coverage"], [&] { return coverage(a["coverage"]); }},
      {"cluster-onehot", &a["onehot"], [&] { return onehot(a["onehot"]); }},
      {"rowselect-counterexample", &a["counterexample"], [&] { return counterexample(a["counterexample"]); }},
      {"norm-audit", &a["norm_audit"], [&] { return norm_audit(a["norm_audit"], sample); }},
      {"determinism", &a["determinism"], [] { return determinism(); }},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto& c = criteria[k];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double budget = (*c.cfg)["budget_s"].get<double>();
    if (secs > budget) {
      o.pass = false;
      o.detail += "; over time budget " + fmt("%.0f s", budget);
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %zu %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", k + 1, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
