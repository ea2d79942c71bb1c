#pragma once

// Seeded instance generators with known ground truth. Every generator
// re-checks the property it claims before returning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gtc/error.hpp"
#include "gtc/graph.hpp"
#include "gtc/linalg.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"
#include "gtc/transformer.hpp"

namespace gtc {

enum class SynthKind { NearLowrank, Clustered, Counterexample, Generic };

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::NearLowrank: return "near-lowrank";
    case SynthKind::Clustered: return "clustered";
    case SynthKind::Counterexample: return "counterexample";
    case SynthKind::Generic: return "generic";
  }
  return "?";
}

inline SynthKind parse_synth_kind(const std::string& s) {
  for (auto k : {SynthKind::NearLowrank, SynthKind::Clustered, SynthKind::Counterexample,
                 SynthKind::Generic}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown synth kind '" + s + "'");
}

struct SynthSpec {
  SynthKind kind = SynthKind::Generic;
  std::size_t n = 100;
  std::size_t D = 32;
  std::size_t d_in = 0;  ///< 0 means d_in = D
  std::size_t L = 1;
  std::size_t d = 8;      ///< true rank (near-lowrank) or width budget (clustered)
  double eps = 0.0;       ///< noise level; relative cluster spread for clustered
  std::uint64_t seed = 0;
  double beta = 1.0;
  double alpha = 1.0;
  std::size_t degree = 8;    ///< random out-neighbors per node, self-loop included on top
  std::size_t clusters = 0;  ///< 0 means d clusters

  std::size_t input_dim() const { return d_in == 0 ? D : d_in; }
  std::size_t cluster_count() const { return clusters == 0 ? d : clusters; }
};

struct GroundTruth {
  std::size_t rank = 0;               ///< rank of the noise-free features
  double eps = 0.0;                   ///< verified noise level (measured ε_cl for clustered)
  std::vector<double> layer_eps;      ///< per layer: FFN-activation distance to rank d, or ε_cl
  std::vector<std::size_t> labels;    ///< clustered only
  Matrix surrogate;                   ///< noise-free features X̄ (or H̄ for the counterexample)
};

struct SynthInstance {
  SynthSpec spec;
  Model model;
  Matrix X;
  AttentionGraph graph;
  GroundTruth truth;
};

namespace detail {

inline double max_column_distance(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (double v : column_distances(a, b)) worst = std::max(worst, v);
  return worst;
}

/// Self-loop plus `degree` distinct random targets drawn from `pool`.
inline std::vector<AttentionGraph::Edge> sample_neighbors(std::size_t i,
                                                          const std::vector<std::size_t>& pool,
                                                          std::size_t degree, Rng& rng) {
  std::vector<std::size_t> others;
  for (std::size_t j : pool)
    if (j != i) others.push_back(j);
  degree = std::min(degree, others.size());
  for (std::size_t t = 0; t < degree; ++t) {
    std::uniform_int_distribution<std::size_t> pick(t, others.size() - 1);
    std::swap(others[t], others[pick(rng)]);
  }
  std::vector<AttentionGraph::Edge> edges{{i, i}};
  for (std::size_t t = 0; t < degree; ++t) edges.emplace_back(i, others[t]);
  return edges;
}

inline void check_spec(const SynthSpec& s) {
  if (s.n < 2) throw ValidationError("synth needs n >= 2");
  if (s.D < 1 || s.L < 1) throw ValidationError("synth needs D >= 1 and L >= 1");
  if (!(s.beta > 0.0) || !(s.alpha > 0.0)) throw ValidationError("beta and alpha must be positive");
  if (!(s.eps >= 0.0) || !std::isfinite(s.eps)) throw ValidationError("eps must be a finite value >= 0");
}

}  // namespace detail

/// Node i attends to itself and `degree` distinct random other nodes.
inline AttentionGraph random_neighbor_graph(std::size_t n, std::size_t degree, std::uint64_t seed) {
  if (degree + 1 >= n) return AttentionGraph::full(n);
  Rng rng(seed);
  std::vector<AttentionGraph::Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    // Rejection sampling keeps this O(degree) per node for sparse graphs.
    std::vector<std::size_t> picked;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (picked.size() < degree) {
      const std::size_t j = pick(rng);
      if (j != i && std::find(picked.begin(), picked.end(), j) == picked.end()) picked.push_back(j);
    }
    edges.emplace_back(i, i);
    for (std::size_t j : picked) edges.emplace_back(i, j);
  }
  return AttentionGraph(n, std::move(edges));
}

/// Columns of norm sqrt(alpha) spanning a random rank-d subspace, plus a
/// random perturbation of norm exactly eps per column. Returns (H, H̄).
inline std::pair<Matrix, Matrix> near_lowrank_matrix(std::size_t rows, std::size_t n, std::size_t d,
                                                     double eps, Rng& rng, double alpha = 1.0) {
  Matrix bar = normalize_columns(gaussian_matrix(rows, d, rng) * gaussian_matrix(d, n, rng), alpha);
  Matrix h = bar;
  if (eps > 0.0) {
    for (std::size_t c = 0; c < n; ++c) {
      const Vector e = random_unit_vector(rows, rng);
      for (std::size_t r = 0; r < rows; ++r) h(r, c) += eps * e[r];
    }
  }
  return {std::move(h), std::move(bar)};
}

/// Features within eps (per column, exactly) of a rank-d matrix, and FFNs
/// W_1 = P·B + noise whose activations have rank <= d when eps = 0: each row
/// of P is a positive multiple of a standard basis row, so ReLU(P·B·h) =
/// P·ReLU(B·h).
inline SynthInstance synth_near_lowrank(const SynthSpec& spec) {
  detail::check_spec(spec);
  const std::size_t d_in = spec.input_dim();
  if (spec.d < 1 || spec.d > std::min(spec.D, d_in)) throw ValidationError("near-lowrank needs 1 <= d <= min(D, d_in)");
  SynthInstance out;
  out.spec = spec;
  Rng rng(spec.seed);

  Model& m = out.model;
  m.d_in = d_in;
  m.D = spec.D;
  std::uniform_real_distribution<double> positive(0.5, 1.5);
  for (std::size_t l = 0; l < spec.L; ++l) {
    const std::size_t in = l == 0 ? d_in : spec.D;
    Layer layer;
    layer.W_V = with_operator_norm(gaussian_matrix(spec.D, in, rng), spec.beta);
    layer.W_Q = with_operator_norm(gaussian_matrix(spec.D, in, rng), spec.beta);
    layer.W_K = with_operator_norm(gaussian_matrix(spec.D, in, rng), spec.beta);
    Matrix P(spec.D, spec.d);
    for (std::size_t r = 0; r < spec.D; ++r) P(r, r % spec.d) = positive(rng);
    const Matrix core = with_operator_norm(P * gaussian_matrix(spec.d, spec.D, rng), 1.0);
    const Matrix noise = with_operator_norm(gaussian_matrix(spec.D, spec.D, rng), 1.0);
    layer.W_1 = spec.eps > 0.0 ? with_operator_norm(core + spec.eps * noise, spec.beta)
                               : core * spec.beta;
    layer.W_2 = with_operator_norm(gaussian_matrix(spec.D, spec.D, rng), spec.beta);
    m.layers.push_back(std::move(layer));
  }

  std::tie(out.X, out.truth.surrogate) = near_lowrank_matrix(d_in, spec.n, spec.d, spec.eps, rng, spec.alpha);
  out.graph = random_neighbor_graph(spec.n, spec.degree, spec.seed ^ 0x9e3779b97f4a7c15ull);

  out.truth.rank = linalg::numerical_rank(out.truth.surrogate);
  if (out.truth.rank > spec.d) throw ValidationError("near-lowrank: surrogate rank exceeds d");
  const double dist = detail::max_column_distance(out.X, out.truth.surrogate);
  if (std::abs(dist - spec.eps) > 1e-9) throw ValidationError("near-lowrank: feature noise is off target");
  out.truth.eps = spec.eps;
  const ForwardTrace trace = model_forward(m, out.X, out.graph);
  for (const auto& t : trace.layers) {
    const std::size_t r = std::min({spec.d, t.H_3q.rows(), t.H_3q.cols()});
    const Matrix bar = linalg::truncated_svd(t.H_3q, r).reconstruct();
    out.truth.layer_eps.push_back(detail::max_column_distance(t.H_3q, bar));
    if (spec.eps == 0.0 && linalg::numerical_rank(t.H_3q) > spec.d)
      throw ValidationError("near-lowrank: activation rank exceeds d");
  }
  return out;
}

/// Per layer, the largest relative distance of a pooled embedding to the
/// mean of its label group.
inline std::vector<double> label_spread(const ForwardTrace& trace,
                                        const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<double> out;
  for (const auto& t : trace.layers) {
    const Matrix& h = t.H_half;
    Matrix centers(h.rows(), k);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < h.cols(); ++i) {
      ++count[labels[i]];
      for (std::size_t r = 0; r < h.rows(); ++r) centers(r, labels[i]) += h(r, i);
    }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t r = 0; r < h.rows(); ++r) centers(r, a) /= static_cast<double>(std::max<std::size_t>(count[a], 1));
    double worst = 0.0;
    for (std::size_t i = 0; i < h.cols(); ++i) {
      const Vector c = centers.col(labels[i]);
      worst = std::max(worst, distance(h.col(i), c) / norm2(c));
    }
    out.push_back(worst);
  }
  return out;
}

/// k clusters with orthogonal centers at every layer. Node i belongs to
/// cluster i mod k and attends to itself and random members of its own
/// cluster. Feature noise lies in the span of the cluster means and is
/// scaled until the measured spread max_ℓ ε_cl^(ℓ) equals spec.eps.
inline SynthInstance synth_clustered(const SynthSpec& spec) {
  detail::check_spec(spec);
  const std::size_t k = spec.cluster_count();
  const std::size_t d_in = spec.input_dim();
  if (k < 1 || k > spec.d) throw ValidationError("clustered needs 1 <= clusters <= d");
  if (k > d_in || d_in > spec.D) throw ValidationError("clustered needs clusters <= d_in <= D");
  if (spec.n < 2 * k) throw ValidationError("clustered needs at least two nodes per cluster");
  if (!(spec.eps < 0.5)) throw ValidationError("clustered needs eps < 1/2");
  SynthInstance out;
  out.spec = spec;
  Rng rng(spec.seed);

  const Matrix mu = random_orthonormal(d_in, k, rng) * std::sqrt(spec.alpha);
  Model& m = out.model;
  m.d_in = d_in;
  m.D = spec.D;
  Matrix means = mu;  // noise-free cluster embeddings entering layer ℓ
  for (std::size_t l = 0; l < spec.L; ++l) {
    const std::size_t in = l == 0 ? d_in : spec.D;
    Layer layer;
    layer.W_V = random_orthonormal(spec.D, in, rng) * spec.beta;
    layer.W_Q = with_operator_norm(gaussian_matrix(spec.D, in, rng), spec.beta);
    layer.W_K = with_operator_norm(gaussian_matrix(spec.D, in, rng), spec.beta);
    // W_1 sends the direction of center a to a positive vector on block a.
    const Matrix centers = layer.W_V * means;
    Matrix W_1(spec.D, spec.D);
    std::uniform_real_distribution<double> positive(0.5, 1.5);
    for (std::size_t a = 0; a < k; ++a) {
      const std::size_t lo = a * spec.D / k;
      const std::size_t hi = (a + 1) * spec.D / k;
      Vector z(spec.D, 0.0);
      for (std::size_t r = lo; r < hi; ++r) z[r] = positive(rng);
      const double zn = norm2(z);
      const Vector c = centers.col(a);
      const double cn = norm2(c);
      for (std::size_t r = lo; r < hi; ++r)
        for (std::size_t q = 0; q < spec.D; ++q) W_1(r, q) += spec.beta * (z[r] / zn) * (c[q] / cn);
    }
    layer.W_1 = std::move(W_1);
    layer.W_2 = random_orthonormal(spec.D, spec.D, rng) * spec.beta;
    Matrix hidden = layer.W_1 * centers;
    relu_inplace(hidden);
    means = layer.W_2 * hidden;
    m.layers.push_back(std::move(layer));
  }

  out.truth.labels.resize(spec.n);
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < spec.n; ++i) {
    out.truth.labels[i] = i % k;
    members[i % k].push_back(i);
  }
  std::vector<AttentionGraph::Edge> edges;
  for (std::size_t i = 0; i < spec.n; ++i) {
    auto e = detail::sample_neighbors(i, members[i % k], spec.degree, rng);
    edges.insert(edges.end(), e.begin(), e.end());
  }
  out.graph = AttentionGraph(spec.n, std::move(edges));

  Matrix base(d_in, spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) base.set_col(i, mu.col(i % k));
  out.truth.surrogate = base;
  const Matrix coeff = gaussian_matrix(k, spec.n, rng, 1.0 / std::sqrt(static_cast<double>(k)));
  const Matrix direction = mu * coeff;

  auto build = [&](double s) { return base + direction * s; };
  auto spread = [&](double s) {
    const auto per_layer = label_spread(model_forward(m, build(s), out.graph), out.truth.labels, k);
    return std::make_pair(*std::max_element(per_layer.begin(), per_layer.end()), per_layer);
  };
  double s = spec.eps;
  auto [measured, per_layer] = spread(s);
  if (spec.eps > 0.0) {
    for (int it = 0; it < 200 && std::abs(measured - spec.eps) > 1e-9 * spec.eps; ++it) {
      if (!(measured > 0.0)) throw ValidationError("clustered: noise has no effect on the spread");
      s *= spec.eps / measured;
      std::tie(measured, per_layer) = spread(s);
    }
    if (std::abs(measured - spec.eps) > 1e-6 * spec.eps)
      throw ValidationError("clustered: could not calibrate the cluster spread");
  } else if (measured > 1e-12) {
    throw ValidationError("clustered: noise-free instance is not exactly clustered");
  }
  out.X = build(s);
  out.truth.rank = linalg::numerical_rank(out.X);
  if (out.truth.rank > k) throw ValidationError("clustered: features exceed rank k");
  out.truth.eps = measured;
  out.truth.layer_eps = per_layer;
  return out;
}

/// H̄ with every entry 1/sqrt(D) and H = H̄ + eps·I (n = D). The model is a
/// single identity layer over self-loops, so its FFN activation is H itself.
inline SynthInstance synth_counterexample(const SynthSpec& spec) {
  detail::check_spec(spec);
  const std::size_t D = spec.D;
  if (spec.n != D) throw ValidationError("counterexample needs n = D");
  SynthInstance out;
  out.spec = spec;
  out.truth.surrogate = Matrix(D, D, 1.0 / std::sqrt(static_cast<double>(D)));
  out.X = out.truth.surrogate + Matrix::identity(D) * spec.eps;
  out.truth.rank = 1;
  out.truth.eps = spec.eps;
  Model& m = out.model;
  m.d_in = D;
  m.D = D;
  const Matrix I = Matrix::identity(D);
  m.layers.push_back(Layer{I, I, I, I, I, std::nullopt});
  std::vector<AttentionGraph::Edge> edges;
  for (std::size_t i = 0; i < D; ++i) edges.emplace_back(i, i);
  out.graph = AttentionGraph(D, std::move(edges));
  out.truth.layer_eps.push_back(spec.eps);
  if (std::abs(detail::max_column_distance(out.X, out.truth.surrogate) - spec.eps) > 1e-9)
    throw ValidationError("counterexample: perturbation is off target");
  return out;
}

/// random_model weights, features of norm sqrt(alpha), random neighbor graph.
inline SynthInstance synth_generic(const SynthSpec& spec) {
  detail::check_spec(spec);
  SynthInstance out;
  out.spec = spec;
  auto [model, features] = random_model(spec.input_dim(), spec.D, spec.L, spec.seed, spec.beta, spec.alpha);
  out.model = std::move(model);
  out.X = features(spec.n);
  out.graph = random_neighbor_graph(spec.n, spec.degree, spec.seed ^ 0x9e3779b97f4a7c15ull);
  out.truth.rank = linalg::numerical_rank(out.X);
  out.truth.surrogate = out.X;
  return out;
}

inline SynthInstance synth(const SynthSpec& spec) {
  switch (spec.kind) {
    case SynthKind::NearLowrank: return synth_near_lowrank(spec);
    case SynthKind::Clustered: return synth_clustered(spec);
    case SynthKind::Counterexample: return synth_counterexample(spec);
    case SynthKind::Generic: return synth_generic(spec);
  }
  throw ValidationError("unknown synth kind");
}

}  // namespace gtc
