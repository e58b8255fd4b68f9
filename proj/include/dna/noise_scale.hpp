#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dna/matrix.hpp"
#include "dna/rng.hpp"

namespace dna {

// Paired small/large-batch gradient statistics with EMA smoothing. The
// smoothed ratio estimates the simple noise scale B = tr(Sigma)/|G|^2 and
// its square root sigma, the noise-to-signal length ratio.
struct NoiseScaleProbe {
  std::size_t b_small = 16;
  std::size_t b_big = 16384;
  double ema_decay = 0.99;
  double ema_g2 = 0.0;
  double ema_s = 0.0;
  bool initialized = false;

  void validate() const {
    if (b_small == 0 || b_small >= b_big)
      throw std::invalid_argument("NoiseScaleProbe: need 0 < b_small < b_big");
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
      throw std::invalid_argument("NoiseScaleProbe: ema_decay must be in (0, 1)");
  }

  // Eq. 4-5 precision degrades as the batch sizes approach each other.
  bool wants_ratio_warning() const { return b_big <= 10 * b_small; }
};

struct NoiseScaleReading {
  bool valid = false;  // false when the smoothed |G|^2 estimate is not positive
  double b_simple = 0.0;
  double sigma = 0.0;
  double ema_g2 = 0.0;
  double ema_s = 0.0;
};

// Mean gradient over the data points named by the index span.
using SubsetGradientFn = std::function<std::vector<double>(std::span<const std::size_t>)>;

// Evaluates the gradient over a b_big sample of the data and over a
// uniformly drawn b_small subset of that same sample.
inline std::pair<std::vector<double>, std::vector<double>> paired_gradient_probe(
    const SubsetGradientFn& grad_fn, std::size_t data_size, std::size_t b_small,
    std::size_t b_big, Rng& rng) {
  if (b_small == 0 || b_small > b_big)
    throw std::invalid_argument("paired_gradient_probe: need 0 < b_small <= b_big");
  if (data_size < b_big)
    throw std::invalid_argument("paired_gradient_probe: insufficient data for b_big");

  std::vector<std::size_t> big_indices;
  if (data_size == b_big) {
    big_indices.resize(b_big);
    for (std::size_t i = 0; i < b_big; ++i) big_indices[i] = i;
  } else {
    rng.sample_without_replacement(data_size, b_big, big_indices);
  }
  std::vector<double> g_big = grad_fn(big_indices);
  if (b_small == b_big) return {g_big, g_big};

  std::vector<std::size_t> pick;
  rng.sample_without_replacement(b_big, b_small, pick);
  std::vector<std::size_t> small_indices(b_small);
  for (std::size_t i = 0; i < b_small; ++i) small_indices[i] = big_indices[pick[i]];
  std::vector<double> g_small = grad_fn(small_indices);
  return {std::move(g_small), std::move(g_big)};
}

// Unbiased estimators of |G|^2 and tr(Sigma) from one paired probe:
//   g2_hat = (B |g_big|^2 - b |g_small|^2) / (B - b)
//   s_hat  = (|g_small|^2 - |g_big|^2) / (1/b - 1/B).
// g2_hat may be negative on a single draw; only its expectation is pinned.
inline std::pair<double, double> estimate_g2_s(std::span<const double> g_small,
                                               std::span<const double> g_big,
                                               std::size_t b_small, std::size_t b_big) {
  if (b_small == b_big)
    throw std::invalid_argument("estimate_g2_s: b_small == b_big divides by zero");
  if (g_small.size() != g_big.size())
    throw std::invalid_argument("estimate_g2_s: gradient dims differ");
  const double nb = static_cast<double>(b_big);
  const double ns = static_cast<double>(b_small);
  const double big_norm2 = squared_norm(g_big);
  const double small_norm2 = squared_norm(g_small);
  const double g2_hat = (nb * big_norm2 - ns * small_norm2) / (nb - ns);
  const double s_hat = (small_norm2 - big_norm2) / (1.0 / ns - 1.0 / nb);
  return {g2_hat, s_hat};
}

// Folds one probe's statistics into the EMAs and reads out B and sigma.
// A non-positive smoothed |G|^2 makes B undefined; the reading is flagged
// rather than propagating a NaN.
inline NoiseScaleReading update_and_read(NoiseScaleProbe& probe, double g2_hat, double s_hat) {
  if (!std::isfinite(g2_hat) || !std::isfinite(s_hat))
    throw std::invalid_argument("update_and_read: non-finite statistics");
  if (!probe.initialized) {
    probe.ema_g2 = g2_hat;
    probe.ema_s = s_hat;
    probe.initialized = true;
  } else {
    probe.ema_g2 = probe.ema_decay * probe.ema_g2 + (1.0 - probe.ema_decay) * g2_hat;
    probe.ema_s = probe.ema_decay * probe.ema_s + (1.0 - probe.ema_decay) * s_hat;
  }
  NoiseScaleReading reading;
  reading.ema_g2 = probe.ema_g2;
  reading.ema_s = probe.ema_s;
  if (probe.ema_g2 > 0.0) {
    reading.valid = true;
    reading.b_simple = probe.ema_s / probe.ema_g2;
    reading.sigma = std::sqrt(std::max(reading.b_simple, 0.0));
  }
  return reading;
}

}  // namespace dna
