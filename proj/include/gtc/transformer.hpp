#pragma once

// Single-head graph transformer forward pass with full tracing, the norm
// audit, and a synthetic model generator with controlled norms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gtc/graph.hpp"
#include "gtc/linalg.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"

namespace gtc {

struct LayerTrace {
  Matrix H_in;    ///< H^(ℓ), one column per node
  Matrix Q;
  Matrix K;
  Matrix V;
  Vector scores;  ///< a_ij in the graph's CSR edge order
  Matrix H_half;  ///< H^(ℓ+1/2), attention output
  Matrix H_3q;    ///< H^(ℓ+3/4), after W_1 and ReLU
  Matrix H_out;   ///< H^(ℓ+1)
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;

  const Matrix& output() const { return layers.back().H_out; }
};

inline void relu_inplace(Matrix& m) noexcept {
  for (auto& v : m.values()) v = v > 0.0 ? v : 0.0;
}

/// Softmax attention over each node's neighbors; returns a_ij per CSR edge.
/// Logits are K_j·Q_i / score_divisor, normalized with max subtraction.
inline Vector attention_scores(const Matrix& Q, const Matrix& K, const AttentionGraph& graph,
                               double score_divisor = 1.0) {
  const std::size_t n = graph.n();
  const Matrix qt = Q.transpose();
  const Matrix kt = K.transpose();
  Vector scores(graph.edge_count());
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = graph.neighbors(i);
    const std::size_t base = graph.offset(i);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < nbrs.size(); ++e) {
      const double logit = dot(kt.row(nbrs[e]), qt.row(i)) / score_divisor;
      scores[base + e] = logit;
      peak = std::max(peak, logit);
    }
    double total = 0.0;
    for (std::size_t e = 0; e < nbrs.size(); ++e) {
      const double w = std::exp(scores[base + e] - peak);
      scores[base + e] = w;
      total += w;
    }
    for (std::size_t e = 0; e < nbrs.size(); ++e) scores[base + e] /= total;
  }
  return scores;
}

/// Σ_j a_ij v_j for every node i.
inline Matrix attention_pool(const Matrix& V, const Vector& scores, const AttentionGraph& graph) {
  const Matrix vt = V.transpose();
  Matrix pooled(graph.n(), V.rows());
  for (std::size_t i = 0; i < graph.n(); ++i) {
    const auto nbrs = graph.neighbors(i);
    const std::size_t base = graph.offset(i);
    auto out = pooled.row(i);
    for (std::size_t e = 0; e < nbrs.size(); ++e) {
      const double a = scores[base + e];
      const auto v = vt.row(nbrs[e]);
      for (std::size_t c = 0; c < v.size(); ++c) out[c] += a * v[c];
    }
  }
  return pooled.transpose();
}

/// ReLU(W_1·h + b_1) column-wise.
inline Matrix ffn_hidden(const Layer& layer, const Matrix& h_half) {
  Matrix pre = layer.W_1 * h_half;
  if (layer.b_1) {
    for (std::size_t r = 0; r < pre.rows(); ++r)
      for (std::size_t c = 0; c < pre.cols(); ++c) pre(r, c) += (*layer.b_1)[r];
  }
  relu_inplace(pre);
  return pre;
}

inline LayerTrace layer_forward(const Layer& layer, const Matrix& H, const AttentionGraph& graph,
                                double score_divisor) {
  if (H.cols() != graph.n()) {
    throw ValidationError("embedding has " + std::to_string(H.cols()) + " columns but graph has " +
                          std::to_string(graph.n()) + " nodes");
  }
  if (layer.W_Q.cols() != H.rows() || layer.W_K.cols() != H.rows() ||
      layer.W_V.cols() != H.rows() || layer.W_Q.rows() != layer.W_K.rows() ||
      layer.W_1.cols() != layer.W_V.rows() || layer.W_2.cols() != layer.W_1.rows() ||
      (layer.b_1 && layer.b_1->size() != layer.W_1.rows())) {
    throw ValidationError("layer weights do not fit embedding width " + std::to_string(H.rows()));
  }
  LayerTrace t;
  t.H_in = H;
  t.Q = layer.W_Q * H;
  t.K = layer.W_K * H;
  t.V = layer.W_V * H;
  t.scores = attention_scores(t.Q, t.K, graph, score_divisor);
  t.H_half = attention_pool(t.V, t.scores, graph);
  t.H_3q = ffn_hidden(layer, t.H_half);
  t.H_out = layer.W_2 * t.H_3q;
  return t;
}

/// Flag form: the 1/√D divisor uses the query width of this layer.
inline LayerTrace layer_forward(const Layer& layer, const Matrix& H, const AttentionGraph& graph,
                                bool use_sqrt_d) {
  return layer_forward(layer, H, graph,
                       use_sqrt_d ? std::sqrt(static_cast<double>(layer.W_Q.rows())) : 1.0);
}

inline ForwardTrace model_forward(const Model& model, const Matrix& X, const AttentionGraph& graph) {
  if (model.L() == 0) throw ValidationError("model has no layers");
  if (X.rows() != model.d_in) {
    throw ValidationError("features have " + std::to_string(X.rows()) + " rows, model expects d_in = " +
                          std::to_string(model.d_in));
  }
  ForwardTrace trace;
  trace.layers.reserve(model.L());
  const double divisor = model.score_scale();
  const Matrix* h = &X;
  for (const auto& layer : model.layers) {
    trace.layers.push_back(layer_forward(layer, *h, graph, divisor));
    h = &trace.layers.back().H_out;
  }
  return trace;
}

// ---------------------------------------------------------------- norm audit

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return {mean, std::sqrt(v / static_cast<double>(xs.size()))};
}

/// "2.83 ± 0.13"
inline std::string format_mean_std(const MeanStd& m, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", digits, m.mean, digits, m.std);
  return buf;
}

struct NormAudit {
  std::vector<LayerNorms> weights;     ///< per layer
  std::vector<double> max_input_norm;  ///< per layer, max_i ||h_i^(ℓ)||
  std::vector<double> mean_input_norm;
  MeanStd operator_norm;  ///< per-layer mean of the five norms, averaged over layers
  MeanStd vector_norm;    ///< per-layer mean input norm, averaged over layers
  double beta_estimate = 0.0;
  double alpha_estimate = 0.0;
};

inline NormAudit audit_norms(const Model& model, const ForwardTrace& trace,
                             double tol = kAuditTol) {
  if (trace.layers.size() != model.L()) throw ValidationError("trace does not belong to this model");
  NormAudit a;
  a.weights = weight_audit(model, tol);
  std::vector<double> layer_op;
  for (const auto& w : a.weights) {
    layer_op.push_back((w.W_V + w.W_Q + w.W_K + w.W_1 + w.W_2) / 5.0);
    a.beta_estimate = std::max(a.beta_estimate, w.max());
  }
  for (const auto& t : trace.layers) {
    const Vector norms = column_norms(t.H_in);
    double mx = 0.0;
    double sum = 0.0;
    for (double v : norms) {
      mx = std::max(mx, v);
      sum += v;
    }
    a.max_input_norm.push_back(mx);
    a.mean_input_norm.push_back(norms.empty() ? 0.0 : sum / static_cast<double>(norms.size()));
    a.alpha_estimate = std::max(a.alpha_estimate, mx * mx);
  }
  a.operator_norm = mean_std(layer_op);
  a.vector_norm = mean_std(a.mean_input_norm);
  return a;
}

// ---------------------------------------------------------------- synthesis

/// Rescales m so its largest singular value is exactly `target`.
inline Matrix with_operator_norm(Matrix m, double target) {
  const double s = linalg::svd(m).singular_values.front();
  if (s == 0.0) throw ValidationError("cannot rescale a zero matrix");
  m *= target / s;
  return m;
}

/// Scales every column of x to Euclidean norm sqrt(alpha).
inline Matrix normalize_columns(Matrix x, double alpha) {
  const Vector norms = column_norms(x);
  const double target = std::sqrt(alpha);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    if (norms[c] == 0.0) continue;
    for (std::size_t r = 0; r < x.rows(); ++r) x(r, c) *= target / norms[c];
  }
  return x;
}

/// Draws node features with every column of norm sqrt(alpha).
struct FeatureGenerator {
  std::size_t d_in = 0;
  double alpha = 1.0;
  std::uint64_t seed = 0;

  Matrix operator()(std::size_t n) const {
    Rng rng(seed);
    return normalize_columns(gaussian_matrix(d_in, n, rng), alpha);
  }
};

inline constexpr std::uint64_t kFeatureSeedOffset = 0x5bd1e995u;

inline std::pair<Model, FeatureGenerator> random_model(std::size_t d_in, std::size_t D,
                                                       std::size_t L, std::uint64_t seed,
                                                       double target_beta, double feature_alpha) {
  if (!(target_beta > 0.0)) throw ValidationError("target_beta must be positive");
  if (!(feature_alpha > 0.0)) throw ValidationError("feature_alpha must be positive");
  if (d_in == 0 || D == 0 || L == 0) throw ValidationError("d_in, D and L must be positive");
  Rng rng(seed);
  Model m;
  m.d_in = d_in;
  m.D = D;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = l == 0 ? d_in : D;
    Layer layer;
    layer.W_V = with_operator_norm(gaussian_matrix(D, in, rng), target_beta);
    layer.W_Q = with_operator_norm(gaussian_matrix(D, in, rng), target_beta);
    layer.W_K = with_operator_norm(gaussian_matrix(D, in, rng), target_beta);
    layer.W_1 = with_operator_norm(gaussian_matrix(D, D, rng), target_beta);
    layer.W_2 = with_operator_norm(gaussian_matrix(D, D, rng), target_beta);
    m.layers.push_back(std::move(layer));
  }
  return {std::move(m), FeatureGenerator{d_in, feature_alpha, seed + kFeatureSeedOffset}};
}

}  // namespace gtc
