#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gtc/jlt.hpp"
#include "gtc/synth.hpp"
#include "gtc/transformer.hpp"

namespace gtc {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

TEST(JlDim, FormulaArithmetic) {
  EXPECT_EQ(jl_dim_unclamped(std::exp(10.0), 1.0, 1.0), 10u);
  const std::size_t a = jl_dim_unclamped(1000, 0.2, 8);
  const std::size_t b = jl_dim_unclamped(1000, 0.1, 8);
  EXPECT_NEAR(double(b) / double(a), 4.0, 0.01);
  EXPECT_EQ(jl_dim(1000, 0.2, 8, 1 << 20), a);
}

TEST(JlDim, ClampsToD) {
  EXPECT_EQ(jl_dim(1000, 0.1, 8, 64), 64u);
  EXPECT_GE(jl_dim(2, 0.49, 1e-6, 64), 1u);
}

TEST(JlDim, RejectsEpsOutsideOpenHalfInterval) {
  EXPECT_THROW(jl_dim(100, 0.0, 8, 64), ValidationError);
  EXPECT_THROW(jl_dim(100, 0.5, 8, 64), ValidationError);
  EXPECT_THROW(jl_dim(100, -0.1, 8, 64), ValidationError);
  EXPECT_THROW(jl_dim(1, 0.1, 8, 64), ValidationError);
}

TEST(JlDim, KappaReplacesN) {
  const std::size_t full = jl_dim(10000, 0.3, 8, 1 << 20);
  const std::size_t dedup = jl_dim(10000, 0.3, 8, 1 << 20, 50);
  EXPECT_LT(dedup, full);
  EXPECT_EQ(dedup, jl_dim_unclamped(50, 0.3, 8));
}

TEST(SampleJl, SeededAndShaped) {
  const auto a = sample_jl(16, 64, 3);
  const auto b = sample_jl(16, 64, 3);
  const auto c = sample_jl(16, 64, 4);
  EXPECT_EQ(a.m, b.m);
  EXPECT_FALSE(a.m == c.m);
  EXPECT_EQ(a.m.rows(), 16u);
  EXPECT_EQ(a.m.cols(), 64u);
  EXPECT_THROW(sample_jl(65, 64, 0), BoundsError);
  EXPECT_THROW(sample_jl(0, 64, 0), BoundsError);
}

TEST(SampleJl, ColumnSquaredNormsAverageOne) {
  const auto map = sample_jl(64, 1000, 11);
  double sum = 0.0;
  for (double v : column_norms(map.m)) sum += v * v;
  const double mean = sum / 1000.0;
  EXPECT_GE(mean, 0.9);
  EXPECT_LE(mean, 1.1);
}

TEST(DotPreservation, ZeroPairsAndIdentity) {
  const auto map = sample_jl(8, 32, 1);
  EXPECT_EQ(verify_dot_preservation(map, {{Vector(32, 0.0), Vector(32, 0.0)}}, 1.0), 0.0);
  Rng rng(2);
  std::vector<std::pair<Vector, Vector>> pairs;
  for (int k = 0; k < 50; ++k) pairs.emplace_back(random_unit_vector(32, rng), random_unit_vector(32, rng));
  EXPECT_LE(verify_dot_preservation(identity_jl(32), pairs, 1.0), 1e-15);
}

TEST(DotPreservation, NormBoundEnforced) {
  const auto map = sample_jl(2, 4, 1);
  EXPECT_THROW(verify_dot_preservation(map, {{Vector{2, 0, 0, 0}, Vector(4, 0.0)}}, 1.0),
               ValidationError);
  EXPECT_NO_THROW(verify_dot_preservation(map, {{Vector{2, 0, 0, 0}, Vector(4, 0.0)}}, 4.0));
  EXPECT_THROW(verify_dot_preservation(map, {{Vector{1, 0}, Vector{1, 0}}}, 4.0), ValidationError);
}

std::vector<std::pair<Vector, Vector>> unit_pairs(std::size_t D, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<Vector, Vector>> pairs;
  for (std::size_t k = 0; k < count; ++k) pairs.emplace_back(random_unit_vector(D, rng), random_unit_vector(D, rng));
  return pairs;
}

TEST(DotPreservation, MonteCarloWithinEpsGamma) {
  const std::size_t D = 512;
  const std::size_t d = jl_dim(1000, 0.5 - 1e-12, 8, D);
  EXPECT_EQ(d, static_cast<std::size_t>(std::ceil(8 * std::log(1000.0) / 0.25)));
  int ok = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pairs = unit_pairs(D, 1000, 100 + s);
    if (verify_dot_preservation(sample_jl(d, D, s), pairs, 1.0) <= 0.5) ++ok;
  }
  EXPECT_GE(ok, 19);
}

TEST(DotPreservation, DeviationShrinksWithWidth) {
  const std::size_t D = 512;
  std::vector<double> at64;
  std::vector<double> at256;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pairs = unit_pairs(D, 200, 500 + s);
    at64.push_back(verify_dot_preservation(sample_jl(64, D, s), pairs, 1.0));
    at256.push_back(verify_dot_preservation(sample_jl(256, D, s), pairs, 1.0));
  }
  EXPECT_LE(median(at256), 0.6 * median(at64));
}

TEST(CompressAttentionJlt, IdentityMapsAreBitIdentical) {
  auto [m, gen] = random_model(6, 16, 3, 4, 2.0, 1.0);
  const Matrix X = gen(40);
  const auto g = random_neighbor_graph(40, 5, 9);
  const Model c = compress_attention_jlt(m, 16, 0, true);
  EXPECT_EQ(model_forward(m, X, g).output(), model_forward(c, X, g).output());
  EXPECT_EQ(c.method, "jlt");
  EXPECT_EQ(c.d, std::optional<std::size_t>(16));
  EXPECT_THROW(compress_attention_jlt(m, 8, 0, true), ValidationError);
}

TEST(CompressAttentionJlt, ShapesAndUntouchedMaps) {
  auto [m, gen] = random_model(6, 16, 2, 4, 1.0, 1.0);
  const Model c = compress_attention_jlt(m, 4, 77);
  EXPECT_EQ(c.layers[0].W_Q.rows(), 4u);
  EXPECT_EQ(c.layers[0].W_Q.cols(), 6u);
  EXPECT_EQ(c.layers[1].W_K.cols(), 16u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(c.layers[l].W_V, m.layers[l].W_V);
    EXPECT_EQ(c.layers[l].W_1, m.layers[l].W_1);
    EXPECT_EQ(c.layers[l].W_2, m.layers[l].W_2);
    const auto map = sample_jl(4, 16, 77 + l);
    EXPECT_EQ(c.layers[l].W_Q, map.m * m.layers[l].W_Q);
  }
  EXPECT_FALSE(c.U_out.has_value());
  EXPECT_EQ(c.output_width(), 16u);
  EXPECT_THROW(compress_attention_jlt(m, 17, 0), BoundsError);
}

TEST(CompressAttentionJlt, AttentionRowsStillSumToOne) {
  auto [m, gen] = random_model(8, 32, 2, 5, 2.0, 1.0);
  const Matrix X = gen(60);
  const auto g = random_neighbor_graph(60, 6, 1);
  const auto t = model_forward(compress_attention_jlt(m, 8, 3), X, g);
  for (const auto& layer : t.layers) {
    for (std::size_t i = 0; i < g.n(); ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < g.neighbors(i).size(); ++e) s += layer.scores[g.offset(i) + e];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

double max_log_ratio(const ForwardTrace& a, const ForwardTrace& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t e = 0; e < a.layers[l].scores.size(); ++e)
      worst = std::max(worst, std::abs(std::log(a.layers[l].scores[e] / b.layers[l].scores[e])));
  return worst;
}

TEST(CompressAttentionJlt, RatiosImproveWithWidth) {
  // β=2 model, ε-target 0.2 at d = 64.
  auto [m, gen] = random_model(64, 64, 1, 21, 2.0, 1.0);
  m.use_sqrt_d = true;
  const Matrix X = gen(500);
  const auto g = random_neighbor_graph(500, 10, 2);
  const auto ref = model_forward(m, X, g);
  std::vector<double> med;
  for (std::size_t d : {8, 16, 32, 64}) {
    std::vector<double> errs;
    for (std::uint64_t s = 0; s < 10; ++s) errs.push_back(max_log_ratio(ref, model_forward(compress_attention_jlt(m, d, s), X, g)));
    med.push_back(median(errs));
  }
  for (std::size_t k = 1; k < med.size(); ++k) EXPECT_LE(med[k], med[k - 1]);
  EXPECT_LE(med.back(), 1.0);
}

}  // namespace
}  // namespace gtc
