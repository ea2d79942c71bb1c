#pragma once

// Cluster-based compression: when the pooled embeddings of every layer form
// well-separated clusters, a d×d feed-forward block can emit a near one-hot
// cluster indicator, and the next layer's input is rebuilt from the cluster
// centers' images.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gtc/error.hpp"
#include "gtc/graph.hpp"
#include "gtc/jlt.hpp"
#include "gtc/linalg.hpp"
#include "gtc/lowrank.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"
#include "gtc/transformer.hpp"

namespace gtc {

inline constexpr std::size_t kDefaultKmeansIterations = 100;

/// Clusters of one layer's pooled embeddings H^(ℓ+1/2).
struct LayerClusters {
  std::vector<std::size_t> assignment;  ///< node → cluster in [0, count())
  std::vector<Vector> centers;          ///< member means, in R^D
  Vector member_distance;               ///< ||h_i − c_a|| / ||c_a|| per node
  double gamma1 = 0.0;                  ///< min center norm
  double gamma2 = 0.0;                  ///< max center norm
  double max_pair_dot = -std::numeric_limits<double>::infinity();
  double eps_cl = 0.0;                  ///< max member_distance

  std::size_t count() const noexcept { return centers.size(); }
};

struct ClusterStructure {
  std::vector<LayerClusters> layers;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Fills centers from the assignment and computes the report fields.
inline void summarize(LayerClusters& lc, const Matrix& pts, std::size_t k) {
  const std::size_t dim = pts.cols();
  std::vector<Vector> sums(k, Vector(dim, 0.0));
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    ++count[lc.assignment[i]];
    const auto p = pts.row(i);
    for (std::size_t c = 0; c < dim; ++c) sums[lc.assignment[i]][c] += p[c];
  }
  lc.centers.clear();
  for (std::size_t a = 0; a < k; ++a) {
    for (auto& v : sums[a]) v /= static_cast<double>(count[a]);
    lc.centers.push_back(std::move(sums[a]));
  }
  lc.gamma1 = std::numeric_limits<double>::infinity();
  lc.gamma2 = 0.0;
  for (const auto& c : lc.centers) {
    lc.gamma1 = std::min(lc.gamma1, norm2(c));
    lc.gamma2 = std::max(lc.gamma2, norm2(c));
  }
  lc.max_pair_dot = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) lc.max_pair_dot = std::max(lc.max_pair_dot, dot(lc.centers[a], lc.centers[b]));
  lc.member_distance.assign(pts.rows(), 0.0);
  lc.eps_cl = 0.0;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const Vector& c = lc.centers[lc.assignment[i]];
    const double cn = norm2(c);
    const double dist = distance(pts.row(i), c);
    lc.member_distance[i] = cn > 0.0 ? dist / cn : (dist > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    lc.eps_cl = std::max(lc.eps_cl, lc.member_distance[i]);
  }
}

}  // namespace detail

namespace detail {

struct KmeansRun {
  std::vector<std::size_t> assignment;
  std::size_t count = 0;
  double inertia = 0.0;
};

/// One k-means++ seeding followed by Lloyd iterations over the rows of pts.
/// Clusters that end up empty are dropped, and seeding stops once every
/// point coincides with a chosen center.
inline KmeansRun kmeans_once(const Matrix& pts, std::size_t k, std::size_t iterations, std::uint64_t seed) {
  const std::size_t n = pts.rows();
  Rng rng(seed);

  std::vector<Vector> centers;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  {
    const auto p = pts.row(first(rng));
    centers.emplace_back(p.begin(), p.end());
  }
  Vector d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(pts.row(i), centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (!(total > 0.0)) break;
    std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
    const auto p = pts.row(pick(rng));
    centers.emplace_back(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(pts.row(i), centers.back()));
  }

  std::vector<std::size_t> assign(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t it = 0; it < std::max<std::size_t>(iterations, 1); ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < centers.size(); ++a) {
        const double dd = squared_distance(pts.row(i), centers[a]);
        if (dd < best_d) {
          best_d = dd;
          best = a;
        }
      }
      changed |= assign[i] != best;
      assign[i] = best;
    }
    // Recompute means and drop empty clusters.
    std::vector<Vector> sums(centers.size(), Vector(pts.cols(), 0.0));
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      const auto p = pts.row(i);
      for (std::size_t c = 0; c < p.size(); ++c) sums[assign[i]][c] += p[c];
    }
    std::vector<std::size_t> remap(centers.size());
    std::vector<Vector> next;
    for (std::size_t a = 0; a < centers.size(); ++a) {
      if (count[a] == 0) {
        changed = true;
        continue;
      }
      for (auto& v : sums[a]) v /= static_cast<double>(count[a]);
      remap[a] = next.size();
      next.push_back(std::move(sums[a]));
    }
    for (auto& a : assign) a = remap[a];
    centers = std::move(next);
    if (!changed) break;
  }

  KmeansRun run;
  for (std::size_t i = 0; i < n; ++i) run.inertia += squared_distance(pts.row(i), centers[assign[i]]);
  run.assignment = std::move(assign);
  run.count = centers.size();
  return run;
}

}  // namespace detail

inline constexpr std::size_t kDefaultKmeansRestarts = 8;

/// k-means on the columns of h: the best of `restarts` k-means++ runs by
/// inertia, each stopping early once its assignment is stable.
inline LayerClusters fit_layer_clusters(const Matrix& h, std::size_t k, std::size_t iterations,
                                        std::uint64_t seed, std::size_t restarts = kDefaultKmeansRestarts) {
  if (k < 1) throw ValidationError("fit_clusters needs d >= 1");
  if (h.cols() == 0) throw ValidationError("fit_clusters needs at least one point");
  const Matrix pts = h.transpose();
  detail::KmeansRun best;
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    auto run = detail::kmeans_once(pts, k, iterations, seed + r * 0x9e3779b97f4a7c15ull);
    if (r == 0 || run.inertia < best.inertia) best = std::move(run);
  }
  LayerClusters lc;
  lc.assignment = std::move(best.assignment);
  detail::summarize(lc, pts, best.count);
  return lc;
}

/// Clusters H^(ℓ+1/2) of every layer (seed + ℓ for layer ℓ).
inline ClusterStructure fit_clusters(const ForwardTrace& trace, std::size_t d,
                                     std::size_t iterations = kDefaultKmeansIterations,
                                     std::uint64_t seed = 0) {
  ClusterStructure s;
  for (std::size_t l = 0; l < trace.layers.size(); ++l)
    s.layers.push_back(fit_layer_clusters(trace.layers[l].H_half, d, iterations, seed + l));
  return s;
}

/// Clusters given by known labels in [0, k); every label must be used.
inline LayerClusters clusters_from_labels(const Matrix& h, const std::vector<std::size_t>& labels,
                                          std::size_t k) {
  if (labels.size() != h.cols()) throw ValidationError("one label per node required");
  std::vector<bool> used(k, false);
  for (auto a : labels) {
    if (a >= k) throw ValidationError("label out of range");
    used[a] = true;
  }
  if (std::find(used.begin(), used.end(), false) != used.end()) throw ValidationError("every label must be used");
  LayerClusters lc;
  lc.assignment = labels;
  detail::summarize(lc, h.transpose(), k);
  return lc;
}

struct SeparationReport {
  bool pass = true;
  std::vector<std::string> violations;
};

inline constexpr double kZeroCenterTol = 1e-12;

/// Checks γ₁ > 0, c_a·c_b < γ₁²/2 for a ≠ b and ||h_i − c_a|| ≤ eps·||c_a||.
inline SeparationReport validate_separation(const LayerClusters& lc, double eps) {
  SeparationReport r;
  auto fail = [&](std::string s) {
    r.pass = false;
    r.violations.push_back(std::move(s));
  };
  double scale = lc.gamma2;
  for (std::size_t a = 0; a < lc.count(); ++a) {
    if (!(norm2(lc.centers[a]) > kZeroCenterTol * std::max(scale, 1.0)))
      fail("center " + std::to_string(a) + " has zero norm");
  }
  const double half = 0.5 * lc.gamma1 * lc.gamma1;
  for (std::size_t a = 0; a < lc.count(); ++a) {
    for (std::size_t b = a + 1; b < lc.count(); ++b) {
      const double v = dot(lc.centers[a], lc.centers[b]);
      if (!(v < half)) {
        fail("centers " + std::to_string(a) + " and " + std::to_string(b) + ": dot " + std::to_string(v) +
             " >= gamma1^2/2 = " + std::to_string(half));
      }
    }
  }
  const double slack = eps * (1.0 + 1e-9) + 1e-12;
  for (std::size_t i = 0; i < lc.member_distance.size(); ++i) {
    if (!(lc.member_distance[i] <= slack)) {
      fail("node " + std::to_string(i) + " (cluster " + std::to_string(lc.assignment[i]) +
           "): relative distance " + std::to_string(lc.member_distance[i]) + " > eps = " + std::to_string(eps));
    }
  }
  return r;
}

inline SeparationReport validate_separation(const ClusterStructure& s, double eps) {
  SeparationReport r;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    auto lr = validate_separation(s.layers[l], eps);
    if (!lr.pass) r.pass = false;
    for (auto& v : lr.violations) r.violations.push_back("layer " + std::to_string(l) + ": " + v);
  }
  return r;
}

// ---------------------------------------------------------------- construction

enum class ClusterEntry { Jl, LowrankInput };

inline std::string to_string(ClusterEntry e) { return e == ClusterEntry::Jl ? "jl" : "lowrank"; }

inline ClusterEntry parse_cluster_entry(const std::string& s) {
  if (s == "jl") return ClusterEntry::Jl;
  if (s == "lowrank") return ClusterEntry::LowrankInput;
  throw ValidationError("unknown cluster entry '" + s + "' (expected jl or lowrank)");
}

struct ClusterOptions {
  ClusterEntry entry = ClusterEntry::LowrankInput;
  double eps = 0.1;
  double jl_c = kDefaultJlConstant;
  std::uint64_t seed = 0;
  std::size_t iterations = kDefaultKmeansIterations;
};

struct ClusterCompression {
  Model model;
  ClusterStructure structure;
  std::vector<std::vector<std::size_t>> representatives;  ///< per layer, node chosen for each cluster
};

inline constexpr std::uint64_t kValueMapSeedOffset = 0x7f4a7c15u;

/// Width-d network whose ReLU block emits a cluster indicator. Row a of Ŵ_1
/// is 4·ĉ_aᵀ/||ĉ_a||² with bias −3, where ĉ_a is the compressed pooled
/// embedding of the member nearest to center a; column a of Ŵ_2 is
/// Λ·W_2·ReLU(W_1·c_a + b_1). Unused cluster slots stay zero.
inline ClusterCompression cluster_compress(const Model& model, const Matrix& X,
                                           const AttentionGraph& graph, std::size_t d,
                                           const ClusterOptions& opt = {}) {
  detail::check_width(model, d);
  if (!(opt.eps >= 0.0) || !std::isfinite(opt.eps)) throw ValidationError("eps must be a finite value >= 0");
  const ForwardTrace ref = model_forward(model, X, graph);
  ClusterCompression res;
  res.structure = fit_clusters(ref, d, opt.iterations, opt.seed);
  const auto sep = validate_separation(res.structure, opt.eps);
  if (!sep.pass) {
    std::string msg = "clusters are not well separated: " + sep.violations.front();
    if (sep.violations.size() > 1) msg += " (+" + std::to_string(sep.violations.size() - 1) + " more)";
    throw ValidationError(msg);
  }

  const std::size_t n = X.cols();
  Matrix U;
  if (opt.entry == ClusterEntry::Jl) {
    if (!(opt.eps > 0.0)) throw ValidationError("jl entry needs eps > 0");
    const std::size_t need = jl_dim_unclamped(static_cast<double>(std::max<std::size_t>(n, 2)), opt.eps, opt.jl_c);
    if (d < need) {
      throw ValidationError("entry condition (jl) fails: d = " + std::to_string(d) + " < c·ln(n)/eps^2 = " +
                            std::to_string(need));
    }
  } else {
    const Matrix bar = detail::rank_surrogate(X, d);
    double worst = 0.0;
    for (double v : column_distances(X, bar)) worst = std::max(worst, v);
    if (!(worst <= opt.eps * (1.0 + 1e-9) + 1e-12)) {
      throw ValidationError("entry condition (lowrank) fails: features are " + std::to_string(worst) +
                            " from rank " + std::to_string(d) + ", eps = " + std::to_string(opt.eps));
    }
    U = linalg::range_basis(bar, d);
  }

  res.model = detail::compressed_shell(model, d, "cluster");
  res.model.params = {{"d", d},
                      {"entry", to_string(opt.entry)},
                      {"eps", opt.eps},
                      {"jl_c", opt.jl_c},
                      {"seed", opt.seed},
                      {"iterations", opt.iterations}};
  const double divisor = model.score_scale();
  Matrix H = X;  // compressed input of the current layer
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    const LayerClusters& lc = res.structure.layers[l];
    Layer c;
    if (l == 0 && opt.entry == ClusterEntry::Jl) {
      const JlMap qk = sample_jl(d, model.D, opt.seed);
      const JlMap v = sample_jl(d, model.D, opt.seed + kValueMapSeedOffset);
      c.W_Q = qk.m * w.W_Q;
      c.W_K = qk.m * w.W_K;
      c.W_V = v.m * w.W_V;
    } else {
      auto att = detail::compress_attention(w, U, d);
      c.W_Q = std::move(att.W_Q);
      c.W_K = std::move(att.W_K);
      c.W_V = std::move(att.W_V);
      if (l == 0) detail::fold_input(c, U.transpose());
    }

    const Vector scores = attention_scores(c.W_Q * H, c.W_K * H, graph, divisor);
    const Matrix h_half = attention_pool(c.W_V * H, scores, graph);

    const Matrix& ref_half = ref.layers[l].H_half;
    Matrix W_1(d, d);
    res.representatives.emplace_back();
    Matrix images(model.D, lc.count());
    for (std::size_t a = 0; a < lc.count(); ++a) {
      std::size_t rep = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (lc.assignment[i] != a) continue;
        const double dist = distance(ref_half.col(i), lc.centers[a]);
        if (dist < best) {
          best = dist;
          rep = i;
        }
      }
      res.representatives.back().push_back(rep);
      const Vector ch = h_half.col(rep);
      const double nn = dot(ch, ch);
      if (!(nn > 0.0)) throw ValidationError("layer " + std::to_string(l) + ": cluster representative has zero norm");
      for (std::size_t k = 0; k < d; ++k) W_1(a, k) = 4.0 * ch[k] / nn;

      Vector pre = w.W_1 * std::span<const double>(lc.centers[a]);
      if (w.b_1)
        for (std::size_t r = 0; r < pre.size(); ++r) pre[r] += (*w.b_1)[r];
      for (auto& v : pre) v = std::max(v, 0.0);
      images.set_col(a, w.W_2 * std::span<const double>(pre));
    }
    const Matrix U_next = linalg::range_basis(images, d);
    const Matrix coded = transpose_times(U_next, images);
    Matrix W_2(d, d);
    for (std::size_t a = 0; a < lc.count(); ++a)
      for (std::size_t k = 0; k < d; ++k) W_2(k, a) = coded(k, a);
    c.W_1 = std::move(W_1);
    c.b_1 = Vector(d, -3.0);
    c.W_2 = std::move(W_2);

    H = layer_forward(c, H, graph, divisor).H_out;
    res.model.layers.push_back(std::move(c));
    U = U_next;
  }
  res.model.U_out = U;
  validate_chain(res.model);
  return res;
}

// ---------------------------------------------------------------- checks

struct OneHotStats {
  std::size_t max_positive = 0;  ///< most strictly positive coordinates at any node
  double off_cluster_max = 0.0;  ///< largest coordinate outside a node's own slot
  double on_min = std::numeric_limits<double>::infinity();
  double on_max = -std::numeric_limits<double>::infinity();
  double max_deviation = 0.0;    ///< max |on-cluster value − 1|
  std::size_t wrong_slot = 0;    ///< nodes whose positive coordinate is not their cluster
  std::vector<std::size_t> positive_count;  ///< per node
  Vector on_value;                          ///< per node
};

/// Inspects ReLU(Ŵ_1·ĥ + b) of a cluster-compressed trace, layer by layer.
inline std::vector<OneHotStats> onehot_check(const ForwardTrace& compressed,
                                             const ClusterStructure& structure) {
  if (compressed.layers.size() != structure.layers.size())
    throw ValidationError("trace and cluster structure have different layer counts");
  std::vector<OneHotStats> out;
  for (std::size_t l = 0; l < compressed.layers.size(); ++l) {
    const Matrix& h = compressed.layers[l].H_3q;
    const auto& lc = structure.layers[l];
    if (lc.assignment.size() != h.cols()) throw ValidationError("cluster structure does not match the trace");
    OneHotStats s;
    for (std::size_t i = 0; i < h.cols(); ++i) {
      const std::size_t slot = lc.assignment[i];
      std::size_t pos = 0;
      for (std::size_t r = 0; r < h.rows(); ++r) {
        const double v = h(r, i);
        if (v > 0.0) {
          ++pos;
          if (r != slot) ++s.wrong_slot;
        }
        if (r != slot) s.off_cluster_max = std::max(s.off_cluster_max, v);
      }
      const double on = h(slot, i);
      s.positive_count.push_back(pos);
      s.on_value.push_back(on);
      s.max_positive = std::max(s.max_positive, pos);
      s.on_min = std::min(s.on_min, on);
      s.on_max = std::max(s.on_max, on);
      s.max_deviation = std::max(s.max_deviation, std::abs(on - 1.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct ClusterDotReport {
  double same_worst = 0.0;   ///< max |h_i·h_j/||c_a||² − 1| within clusters
  double same_bound = 0.0;   ///< 3·ε_cl + tol
  double cross_worst = -std::numeric_limits<double>::infinity();  ///< max h_i·h_j/||c_a||² across clusters
  double cross_bound = 0.0;  ///< 0.5 + 3·ε_cl·(γ₂/γ₁)² + tol
  bool pass = true;
};

inline constexpr double kClusterDotTol = 1e-9;

/// Same- and different-cluster dot-product bounds for pooled embeddings h.
inline ClusterDotReport cluster_dot_check(const Matrix& h, const LayerClusters& lc,
                                          double tol = kClusterDotTol) {
  const Matrix gram = transpose_times(h, h);
  ClusterDotReport r;
  const double e = lc.eps_cl;
  r.same_bound = 3.0 * e + tol;
  const double ratio = lc.gamma2 / lc.gamma1;
  r.cross_bound = 0.5 + 3.0 * e * ratio * ratio + tol;
  std::vector<double> cn2;
  for (const auto& c : lc.centers) cn2.push_back(dot(c, c));
  for (std::size_t i = 0; i < h.cols(); ++i) {
    const std::size_t a = lc.assignment[i];
    for (std::size_t j = 0; j < h.cols(); ++j) {
      const double v = gram(i, j) / cn2[a];
      if (lc.assignment[j] == a) r.same_worst = std::max(r.same_worst, std::abs(v - 1.0));
      else r.cross_worst = std::max(r.cross_worst, v);
    }
  }
  r.pass = r.same_worst <= r.same_bound && r.cross_worst <= r.cross_bound;
  return r;
}

/// Pool-closeness bound: if a/â ∈ exp(±2αε) on every edge and value dot
/// products deviate by at most αε, pooled dot products deviate by at most
/// t·ε with t = 8α² + α + 8α²ε, for 0 < ε < 1/(8α). ε is the smallest
/// value meeting both hypotheses, measured from the two traces.
struct PoolClosenessReport {
  double alpha = 0.0;
  double max_log_ratio = 0.0;
  double value_dot_deviation = 0.0;
  double eps = 0.0;
  double t = 0.0;
  double bound = 0.0;
  double max_deviation = 0.0;  ///< max |h_i·h_j − ĥ_i·ĥ_j|
  bool applicable = false;     ///< ε < 1/(8α)
  bool pass = true;
};

inline double max_gram_deviation(const Matrix& a, const Matrix& b) {
  return max_abs_diff(transpose_times(a, a), transpose_times(b, b));
}

inline std::vector<PoolClosenessReport> attention_pool_closeness(const ForwardTrace& reference,
                                                                 const ForwardTrace& compressed) {
  if (reference.layers.size() != compressed.layers.size())
    throw ValidationError("traces have different layer counts");
  std::vector<PoolClosenessReport> out;
  for (std::size_t l = 0; l < reference.layers.size(); ++l) {
    const auto& r = reference.layers[l];
    const auto& c = compressed.layers[l];
    if (r.scores.size() != c.scores.size()) throw ValidationError("traces use different graphs");
    PoolClosenessReport p;
    for (double v : column_norms(r.H_in)) p.alpha = std::max(p.alpha, v * v);
    for (double v : column_norms(r.V)) p.alpha = std::max(p.alpha, v * v);
    for (std::size_t e = 0; e < r.scores.size(); ++e)
      p.max_log_ratio = std::max(p.max_log_ratio, std::abs(std::log(r.scores[e] / c.scores[e])));
    p.value_dot_deviation = max_gram_deviation(r.V, c.V);
    p.max_deviation = max_gram_deviation(r.H_half, c.H_half);
    if (p.alpha > 0.0) {
      p.eps = std::max(p.max_log_ratio / (2.0 * p.alpha), p.value_dot_deviation / p.alpha);
      p.t = 8.0 * p.alpha * p.alpha + p.alpha + 8.0 * p.alpha * p.alpha * p.eps;
      p.bound = p.t * p.eps;
      p.applicable = p.eps < 1.0 / (8.0 * p.alpha);
      p.pass = !p.applicable || p.max_deviation <= p.bound * (1.0 + 1e-9) + 1e-12;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace gtc
