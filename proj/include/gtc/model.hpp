#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtc/error.hpp"
#include "gtc/linalg.hpp"
#include "gtc/matrix.hpp"

namespace gtc {

/// One transformer layer. Embeddings are columns, so every weight acts by
/// left multiplication: Q = W_Q·H, h^(+3/4) = ReLU(W_1·h^(+1/2) + b_1).
struct Layer {
  Matrix W_V;
  Matrix W_Q;
  Matrix W_K;
  Matrix W_1;
  Matrix W_2;
  std::optional<Vector> b_1;
};

/// Reference network (d unset) or compressed network of width d. A
/// compressed network may carry U_out, which maps its outputs back to R^D.
struct Model {
  std::size_t d_in = 0;
  std::size_t D = 0;
  bool use_sqrt_d = false;
  std::vector<Layer> layers;

  std::optional<std::size_t> d;
  std::optional<Matrix> U_out;
  std::string method;             ///< compression method tag, empty for reference
  nlohmann::ordered_json params;  ///< construction parameters (seed, eps, ...)

  std::size_t L() const noexcept { return layers.size(); }
  bool compressed() const noexcept { return d.has_value(); }
  std::size_t output_width() const { return layers.empty() ? d_in : layers.back().W_2.rows(); }

  /// Divisor applied to raw attention logits.
  double score_scale() const { return use_sqrt_d ? std::sqrt(static_cast<double>(D)) : 1.0; }
};

/// Operator norms of one layer's five linear maps.
struct LayerNorms {
  double W_V = 0.0;
  double W_Q = 0.0;
  double W_K = 0.0;
  double W_1 = 0.0;
  double W_2 = 0.0;

  double max() const { return std::max({W_V, W_Q, W_K, W_1, W_2}); }
};

inline constexpr double kAuditTol = 1e-10;

inline LayerNorms layer_norms(const Layer& layer, double tol = kAuditTol) {
  return {linalg::operator_norm(layer.W_V, tol), linalg::operator_norm(layer.W_Q, tol),
          linalg::operator_norm(layer.W_K, tol), linalg::operator_norm(layer.W_1, tol),
          linalg::operator_norm(layer.W_2, tol)};
}

inline std::vector<LayerNorms> weight_audit(const Model& model, double tol = kAuditTol) {
  std::vector<LayerNorms> out;
  out.reserve(model.L());
  for (const auto& layer : model.layers) out.push_back(layer_norms(layer, tol));
  return out;
}

namespace detail {

inline void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::size_t layer,
                         const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError("layer " + std::to_string(layer) + " " + name + " has shape " +
                          m.shape_string() + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
}

}  // namespace detail

/// Checks that consecutive maps compose: each layer consumes the previous
/// layer's output width, Q and K agree, and the FFN is consistent.
inline void validate_chain(const Model& model) {
  if (model.layers.empty()) throw ValidationError("model has no layers");
  if (model.d_in == 0 || model.D == 0) throw ValidationError("model widths must be positive");
  std::size_t width = model.d_in;
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    const std::size_t qk = w.W_Q.rows();
    const std::size_t v = w.W_V.rows();
    const std::size_t hidden = w.W_1.rows();
    detail::expect_shape(w.W_Q, qk, width, l, "W_Q");
    detail::expect_shape(w.W_K, qk, width, l, "W_K");
    detail::expect_shape(w.W_V, v, width, l, "W_V");
    detail::expect_shape(w.W_1, hidden, v, l, "W_1");
    detail::expect_shape(w.W_2, w.W_2.rows(), hidden, l, "W_2");
    if (qk == 0 || v == 0 || hidden == 0 || w.W_2.rows() == 0)
      throw ValidationError("layer " + std::to_string(l) + " has an empty weight matrix");
    if (w.b_1 && w.b_1->size() != hidden) {
      throw ValidationError("layer " + std::to_string(l) + " b_1 has length " +
                            std::to_string(w.b_1->size()) + ", expected " +
                            std::to_string(hidden));
    }
    width = w.W_2.rows();
  }
  if (model.U_out) {
    if (model.U_out->rows() != model.D || model.U_out->cols() != width) {
      throw ValidationError("U_out has shape " + model.U_out->shape_string() + ", expected " +
                            std::to_string(model.D) + "x" + std::to_string(width));
    }
  }
}

/// Reference networks additionally have every hidden width equal to D.
inline void validate_reference(const Model& model) {
  validate_chain(model);
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    const std::size_t in = l == 0 ? model.d_in : model.D;
    detail::expect_shape(w.W_Q, model.D, in, l, "W_Q");
    detail::expect_shape(w.W_V, model.D, in, l, "W_V");
    detail::expect_shape(w.W_1, model.D, model.D, l, "W_1");
    detail::expect_shape(w.W_2, model.D, model.D, l, "W_2");
  }
}

inline void validate_model(const Model& model) {
  if (model.compressed()) {
    validate_chain(model);
    if (*model.d == 0) throw ValidationError("compressed width d must be positive");
  } else {
    validate_reference(model);
    if (model.U_out) throw ValidationError("U_out is only valid on compressed models");
  }
}

}  // namespace gtc
