#pragma once

// Rank-based width reduction: exact compression when inputs and FFN
// activations have rank <= d, approximate compression from rank-d
// surrogates, and leverage-score row sampling of the FFN activations.

#include <cstdint>
#include <random>
#include <string>
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

enum class LiftKind { Projection, RowSelection };

/// U maps width-d (or width-r) codes back to R^D; Λ restricts to them.
struct LiftPair {
  Matrix U;
  Matrix Lambda;
  LiftKind kind = LiftKind::Projection;
};

struct LowRankLift {
  LiftPair pair;
  Matrix surrogate;  ///< best rank-d approximation H̄ of the input
};

/// Builds H̄ = best rank-d approximation of h and a lift pair for it.
/// Projection: U is an orthonormal basis of span(H̄), Λ = Uᵀ.
/// Row selection: Λ picks rows of H̄ spanning its row space (one-hot rows),
/// U holds the interpolation coefficients; at most d rows are picked.
inline LowRankLift lowrank_lift(const Matrix& h, std::size_t d, LiftKind mode) {
  if (d < 1 || d > std::min(h.rows(), h.cols())) {
    throw BoundsError("lift rank " + std::to_string(d) + " outside [1, " +
                      std::to_string(std::min(h.rows(), h.cols())) + "]");
  }
  const auto svd = linalg::truncated_svd(h, d);
  LowRankLift out;
  out.surrogate = svd.reconstruct();
  out.pair.kind = mode;
  if (mode == LiftKind::Projection) {
    out.pair.U = svd.left_basis;
    out.pair.Lambda = svd.left_basis.transpose();
  } else {
    const auto basis = linalg::pivoted_row_basis(out.surrogate);
    out.pair.U = basis.coeffs;
    out.pair.Lambda = Matrix(basis.indices.size(), h.rows());
    for (std::size_t k = 0; k < basis.indices.size(); ++k) out.pair.Lambda(k, basis.indices[k]) = 1.0;
  }
  return out;
}

/// Per-column ||U·Λ·h_i − h_i||.
inline Vector lift_column_errors(const LiftPair& pair, const Matrix& h) {
  return column_distances(pair.U * (pair.Lambda * h), h);
}

namespace detail {

struct AttentionBlock {
  Matrix W_Q;
  Matrix W_K;
  Matrix W_V;
  Matrix U_V;  ///< lift of the pooled values
};

/// Width-d attention acting on codes ĥ with h ≈ U·ĥ: scores are preserved
/// exactly for h in span(U), and pooled values satisfy v = U_V·v̂ there.
inline AttentionBlock compress_attention(const Layer& w, const Matrix& U, std::size_t d) {
  AttentionBlock b;
  const Matrix qu = w.W_Q * U;
  const Matrix ku = w.W_K * U;
  const Matrix vu = w.W_V * U;
  b.W_Q = Matrix::identity(d);
  b.W_K = transpose_times(qu, ku);
  b.U_V = linalg::range_basis(vu, d);
  b.W_V = transpose_times(b.U_V, vu);
  return b;
}

/// Makes layer 0 consume raw features: codes are Λ_in·x.
inline void fold_input(Layer& layer, const Matrix& lambda_in) {
  layer.W_Q = layer.W_Q * lambda_in;
  layer.W_K = layer.W_K * lambda_in;
  layer.W_V = layer.W_V * lambda_in;
}

inline Model compressed_shell(const Model& ref, std::size_t d, std::string method) {
  Model out;
  out.d_in = ref.d_in;
  out.D = ref.D;
  out.use_sqrt_d = ref.use_sqrt_d;
  out.d = d;
  out.method = std::move(method);
  return out;
}

inline void check_width(const Model& model, std::size_t d) {
  validate_reference(model);
  if (d < 1 || d > model.D) throw BoundsError("compressed width d must lie in [1, D]");
}

}  // namespace detail

/// Zero-error compression to width d. Requires rank(X) <= d and
/// rank(H^(ℓ+3/4)) <= d at every layer (numerical rank at rank_tol).
inline Model exact_compress(const Model& model, const Matrix& X, const AttentionGraph& graph,
                            std::size_t d, double rank_tol = linalg::kDefaultRankTol) {
  detail::check_width(model, d);
  const ForwardTrace ref = model_forward(model, X, graph);

  const std::size_t x_rank = linalg::numerical_rank(X, rank_tol);
  if (x_rank > d) {
    throw ValidationError("input features have numerical rank " + std::to_string(x_rank) +
                          " > d = " + std::to_string(d));
  }
  for (std::size_t l = 0; l < model.L(); ++l) {
    const std::size_t r = linalg::numerical_rank(ref.layers[l].H_3q, rank_tol);
    if (r > d) {
      throw ValidationError("layer " + std::to_string(l) + ": FFN activation has numerical rank " +
                            std::to_string(r) + " > d = " + std::to_string(d));
    }
  }

  Model out = detail::compressed_shell(model, d, "exact");
  out.params = {{"d", d}, {"rank_tol", rank_tol}};
  const Matrix U_in = linalg::range_basis(X, d);
  Matrix U = U_in;
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    auto att = detail::compress_attention(w, U, d);

    // One-hot row selection commutes with the elementwise ReLU.
    const auto basis = linalg::pivoted_row_basis(ref.layers[l].H_3q, rank_tol);
    const std::size_t r = basis.indices.size();
    if (r > d) {
      throw ValidationError("layer " + std::to_string(l) + ": row basis needs " + std::to_string(r) +
                            " rows > d = " + std::to_string(d));
    }
    Matrix lambda_sigma(d, model.D);
    for (std::size_t k = 0; k < r; ++k) lambda_sigma(k, basis.indices[k]) = 1.0;
    Matrix U_sigma(model.D, d);
    for (std::size_t i = 0; i < model.D; ++i)
      for (std::size_t k = 0; k < r; ++k) U_sigma(i, k) = basis.coeffs(i, k);

    Layer c;
    c.W_Q = std::move(att.W_Q);
    c.W_K = std::move(att.W_K);
    c.W_V = std::move(att.W_V);
    c.W_1 = lambda_sigma * w.W_1 * att.U_V;
    if (w.b_1) c.b_1 = lambda_sigma * std::span<const double>(*w.b_1);
    const Matrix w2u = w.W_2 * U_sigma;
    const Matrix U_next = linalg::range_basis(w2u, d);
    c.W_2 = transpose_times(U_next, w2u);
    if (l == 0) detail::fold_input(c, U_in.transpose());
    out.layers.push_back(std::move(c));
    U = U_next;
  }
  out.U_out = U;
  validate_chain(out);
  return out;
}

struct LowRankCompression {
  Model model;
  Matrix input_surrogate;            ///< X̄
  std::vector<Matrix> ffn_surrogates;  ///< H̄^(ℓ+3/4) per layer
};

namespace detail {

inline Matrix rank_surrogate(const Matrix& h, std::size_t d) {
  return linalg::truncated_svd(h, std::min({d, h.rows(), h.cols()})).reconstruct();
}

}  // namespace detail

/// Width-d compression from rank-d surrogates of X and of each layer's
/// reference FFN activation. The FFN hidden layer keeps width D:
/// Ŵ_1 = W_1·U_V (D×d), Ŵ_2 = Λ^(ℓ+1)·W_2 (d×D).
inline LowRankCompression approx_compress(const Model& model, const Matrix& X,
                                          const AttentionGraph& graph, std::size_t d) {
  detail::check_width(model, d);
  const ForwardTrace ref = model_forward(model, X, graph);
  LowRankCompression res;
  res.model = detail::compressed_shell(model, d, "lowrank");
  res.model.params = {{"d", d}};
  res.input_surrogate = detail::rank_surrogate(X, d);
  const Matrix U_in = linalg::range_basis(res.input_surrogate, d);
  Matrix U = U_in;
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    auto att = detail::compress_attention(w, U, d);
    res.ffn_surrogates.push_back(detail::rank_surrogate(ref.layers[l].H_3q, d));
    const Matrix U_next = linalg::range_basis(w.W_2 * res.ffn_surrogates.back(), d);

    Layer c;
    c.W_Q = std::move(att.W_Q);
    c.W_K = std::move(att.W_K);
    c.W_V = std::move(att.W_V);
    c.W_1 = w.W_1 * att.U_V;
    c.b_1 = w.b_1;
    c.W_2 = transpose_times(U_next, w.W_2);
    if (l == 0) detail::fold_input(c, U_in.transpose());
    res.model.layers.push_back(std::move(c));
    U = U_next;
  }
  res.model.U_out = U;
  validate_chain(res.model);
  return res;
}

// ---------------------------------------------------------------- leverage

/// ℓ_i = a_i (AᵀA)⁺ a_iᵀ, the squared row norms of A's left singular basis.
inline Vector leverage_scores(const Matrix& A) {
  if (A.empty()) throw ValidationError("leverage_scores of an empty matrix");
  const auto s = linalg::svd(A);
  const double cutoff = 1e-12 * s.singular_values.front();
  Vector scores(A.rows(), 0.0);
  for (std::size_t c = 0; c < s.rank(); ++c) {
    if (!(s.singular_values[c] > cutoff)) break;
    for (std::size_t r = 0; r < A.rows(); ++r) scores[r] += s.left_basis(r, c) * s.left_basis(r, c);
  }
  return scores;
}

struct LeverageSample {
  Vector scores;
  std::vector<std::size_t> selected;  ///< k draws, with repetition
  Vector weights;                     ///< 1/sqrt(k·p_i) per draw
  Matrix S;                           ///< k × rows(A) sampling-and-rescaling matrix
  Matrix U;                           ///< A·(S·A)⁺, rows(A) × k
};

/// k i.i.d. row draws with probability ℓ_i/Σℓ. Repeated rows stay as
/// separate rows of S, exactly as in the i.i.d. sampling analysis.
inline LeverageSample leverage_select(const Matrix& A, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("leverage_select needs k >= 1");
  LeverageSample out;
  out.scores = leverage_scores(A);
  double total = 0.0;
  for (double v : out.scores) total += v;
  if (!(total > 0.0)) throw ValidationError("leverage scores sum to zero (A = 0)");

  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick(out.scores.begin(), out.scores.end());
  out.S = Matrix(k, A.rows());
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t i = pick(rng);
    const double p = out.scores[i] / total;
    const double w = 1.0 / std::sqrt(static_cast<double>(k) * p);
    out.selected.push_back(i);
    out.weights.push_back(w);
    out.S(t, i) = w;
  }
  out.U = A * linalg::pseudo_inverse(out.S * A);
  return out;
}

inline constexpr double kDefaultCoverageMultiplier = 10.0;

struct CoverageResult {
  double fraction = 0.0;
  Vector column_errors;  ///< ||U·S·h_i − h_i||
};

/// Fraction of columns h_i reconstructed within multiplier·eps by the
/// leverage-sampled regression onto the rank-d factor A = U_d·Σ_d of h.
inline CoverageResult leverage_coverage(const Matrix& h, std::size_t d, std::size_t k, double eps,
                                        std::uint64_t seed,
                                        double multiplier = kDefaultCoverageMultiplier) {
  const auto svd = linalg::truncated_svd(h, d);
  Matrix A = svd.left_basis;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) A(r, c) *= svd.singular_values[c];
  const auto sample = leverage_select(A, k, seed);
  CoverageResult res;
  res.column_errors = column_distances(sample.U * (sample.S * h), h);
  std::size_t hit = 0;
  for (double e : res.column_errors) hit += e <= multiplier * eps ? 1 : 0;
  res.fraction = static_cast<double>(hit) / static_cast<double>(h.cols());
  return res;
}

/// Approximate compression whose FFN hidden layer is also narrowed, to k
/// leverage-sampled rows of W_1 (positive row weights commute with ReLU).
inline LowRankCompression leverage_compress(const Model& model, const Matrix& X,
                                            const AttentionGraph& graph, std::size_t d,
                                            std::size_t k, std::uint64_t seed) {
  detail::check_width(model, d);
  if (k < 1) throw ValidationError("leverage_compress needs k >= 1");
  const ForwardTrace ref = model_forward(model, X, graph);
  LowRankCompression res;
  res.model = detail::compressed_shell(model, d, "leverage");
  res.model.params = {{"d", d}, {"k", k}, {"seed", seed}};
  res.input_surrogate = detail::rank_surrogate(X, d);
  const Matrix U_in = linalg::range_basis(res.input_surrogate, d);
  Matrix U = U_in;
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    auto att = detail::compress_attention(w, U, d);

    const Matrix& h3q = ref.layers[l].H_3q;
    const auto svd = linalg::truncated_svd(h3q, std::min({d, h3q.rows(), h3q.cols()}));
    res.ffn_surrogates.push_back(svd.reconstruct());
    Matrix A = svd.left_basis;
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) A(r, c) *= svd.singular_values[c];
    const auto sample = leverage_select(A, k, seed + l);

    const Matrix w2u = w.W_2 * sample.U;
    const Matrix U_next = linalg::range_basis(w2u, d);
    Layer c;
    c.W_Q = std::move(att.W_Q);
    c.W_K = std::move(att.W_K);
    c.W_V = std::move(att.W_V);
    c.W_1 = sample.S * w.W_1 * att.U_V;
    if (w.b_1) c.b_1 = sample.S * std::span<const double>(*w.b_1);
    c.W_2 = transpose_times(U_next, w2u);
    if (l == 0) detail::fold_input(c, U_in.transpose());
    res.model.layers.push_back(std::move(c));
    U = U_next;
  }
  res.model.U_out = U;
  validate_chain(res.model);
  return res;
}

}  // namespace gtc
