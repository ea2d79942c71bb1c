#pragma once

// Shared test helpers: Eigen conversions used by the independent oracles.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <unistd.h>

#include "gtc/graph.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"

namespace gtc::testing {

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix m(e.rows(), e.cols());
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c) m(r, c) = e(r, c);
  return m;
}

inline Eigen::VectorXd oracle_singular_values(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues();
}

inline double oracle_spectral_norm(const Matrix& m) {
  return m.empty() ? 0.0 : oracle_singular_values(m)(0);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_matrix(rows, cols, rng);
}

/// Dense oracle: materializes the full n×n logit matrix, masks non-edges
/// with −∞ and applies a plain row softmax.
inline Matrix dense_masked_forward(const Model& model, const Matrix& X, const AttentionGraph& g) {
  Eigen::MatrixXd h = to_eigen(X);
  const std::size_t n = g.n();
  Eigen::MatrixXd mask = Eigen::MatrixXd::Constant(n, n, -std::numeric_limits<double>::infinity());
  for (const auto& [i, j] : g.edges()) mask(i, j) = 0.0;
  const double divisor = model.use_sqrt_d ? std::sqrt(double(model.D)) : 1.0;
  for (const auto& layer : model.layers) {
    const Eigen::MatrixXd q = to_eigen(layer.W_Q) * h;
    const Eigen::MatrixXd k = to_eigen(layer.W_K) * h;
    const Eigen::MatrixXd v = to_eigen(layer.W_V) * h;
    Eigen::MatrixXd logits = (q.transpose() * k) / divisor + mask;  // (i, j) = q_i·k_j
    Eigen::MatrixXd attn(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
      attn.row(i) = e / e.sum();
    }
    Eigen::MatrixXd pooled = v * attn.transpose();
    Eigen::MatrixXd pre = to_eigen(layer.W_1) * pooled;
    if (layer.b_1)
      for (std::size_t r = 0; r < layer.b_1->size(); ++r) pre.row(r).array() += (*layer.b_1)[r];
    h = to_eigen(layer.W_2) * pre.cwiseMax(0.0);
  }
  return from_eigen(h);
}

inline AttentionGraph random_graph(std::size_t n, std::size_t avg_degree, Rng& rng) {
  std::set<AttentionGraph::Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t deg = rng() % (2 * avg_degree + 1);
    for (std::size_t k = 0; k < deg; ++k) edges.insert({i, rng() % n});
  }
  return AttentionGraph(n, {edges.begin(), edges.end()});
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gtc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace gtc::testing
