#pragma once

// Johnson–Lindenstrauss compression of the attention maps: each layer gets an
// independent Gaussian map M and scores become (M·W_Q·h_i)·(M·W_K·h_j).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gtc/error.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"

namespace gtc {

inline constexpr double kDefaultJlConstant = 8.0;

struct JlMap {
  Matrix m;  ///< d × D
  std::uint64_t seed = 0;
  std::string distribution = "gaussian";  ///< "gaussian" or "identity"
};

/// ceil(c·ln(n)/eps²) with no range checks or clamping.
inline std::size_t jl_dim_unclamped(double n, double eps, double c = kDefaultJlConstant) {
  if (!(n > 1.0) || !(eps > 0.0) || !(c > 0.0))
    throw ValidationError("jl dimension needs n > 1, eps > 0, c > 0");
  return static_cast<std::size_t>(std::ceil(c * std::log(n) / (eps * eps)));
}

/// Target width for attention compression, clamped to [1, D]. When the
/// input has only kappa distinct vectors, kappa may replace n.
inline std::size_t jl_dim(std::size_t n, double eps, double c, std::size_t D,
                          std::optional<std::size_t> kappa = std::nullopt) {
  if (!(eps > 0.0 && eps < 0.5)) throw ValidationError("eps must lie in (0, 1/2)");
  if (n < 2) throw ValidationError("jl_dim needs n >= 2");
  if (D == 0) throw ValidationError("jl_dim needs D >= 1");
  std::size_t count = n;
  if (kappa) {
    if (*kappa < 1 || *kappa > n) throw ValidationError("kappa must lie in [1, n]");
    count = std::max<std::size_t>(*kappa, 2);
  }
  const std::size_t raw = jl_dim_unclamped(static_cast<double>(count), eps, c);
  return std::clamp<std::size_t>(raw, 1, D);
}

/// d × D matrix with i.i.d. N(0, 1/d) entries.
inline JlMap sample_jl(std::size_t d, std::size_t D, std::uint64_t seed) {
  if (d < 1 || d > D) throw BoundsError("jl map needs 1 <= d <= D");
  Rng rng(seed);
  return {gaussian_matrix(d, D, rng, 1.0 / std::sqrt(static_cast<double>(d))), seed, "gaussian"};
}

/// Debug map: M = I_D, which preserves every dot product exactly.
inline JlMap identity_jl(std::size_t D) { return {Matrix::identity(D), 0, "identity"}; }

/// max_i |x_iᵀMᵀM y_i − x_iᵀy_i| over the given pairs; every vector must have
/// norm at most sqrt(gamma).
inline double verify_dot_preservation(const JlMap& map,
                                      const std::vector<std::pair<Vector, Vector>>& pairs,
                                      double gamma) {
  const double bound = std::sqrt(gamma) * (1.0 + 1e-12);
  double worst = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& [x, y] = pairs[k];
    if (x.size() != map.m.cols() || y.size() != map.m.cols())
      throw ValidationError("pair " + std::to_string(k) + " has the wrong dimension");
    if (norm2(x) > bound || norm2(y) > bound)
      throw ValidationError("pair " + std::to_string(k) + " exceeds the norm bound sqrt(gamma)");
    const double exact = dot(x, y);
    const double mapped = dot(map.m * std::span<const double>(x), map.m * std::span<const double>(y));
    worst = std::max(worst, std::abs(mapped - exact));
  }
  return worst;
}

/// Replaces W_Q, W_K by M·W_Q, M·W_K per layer (seed + ℓ for layer ℓ); the
/// value and feed-forward maps are unchanged and the output width stays D.
inline Model compress_attention_jlt(const Model& model, std::size_t d, std::uint64_t seed,
                                    bool identity_maps = false) {
  validate_reference(model);
  if (d < 1 || d > model.D) throw BoundsError("jlt width d must lie in [1, D]");
  if (identity_maps && d != model.D) throw ValidationError("identity maps require d = D");
  Model out = model;
  out.d = d;
  out.method = "jlt";
  out.params = {{"d", d}, {"seed", seed}, {"identity_maps", identity_maps}};
  for (std::size_t l = 0; l < model.L(); ++l) {
    const JlMap map = identity_maps ? identity_jl(model.D) : sample_jl(d, model.D, seed + l);
    Layer& layer = out.layers[l];
    layer.W_Q = map.m * model.layers[l].W_Q;
    layer.W_K = map.m * model.layers[l].W_K;
  }
  return out;
}

}  // namespace gtc
