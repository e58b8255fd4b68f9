#pragma once

// Central finite-difference gradient checking against analytic gradients,
// plus an independent per-sample MLP forward evaluator. Test-only code.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dna/net.hpp"

namespace oracle {

// Relative elementwise error with a floor on the denominator so that
// finite-difference roundoff on near-zero entries is compared sensibly.
inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric,
                            double denom_floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric[i]), denom_floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Central differences over every parameter of a scalar-valued function.
inline std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                             std::vector<double> params, double h = 1e-5) {
  std::vector<double> grad(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f(params);
    params[i] = saved - h;
    const double down = f(params);
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Independent forward pass: per-sample, recursive over layers, written
// directly against the parameter layout (hidden layers then heads, each
// weights row-major then biases).
inline std::vector<std::vector<double>> mlp_forward_reference(const dna::NetSpec& spec,
                                                              std::span<const double> params,
                                                              std::span<const double> sample) {
  std::vector<double> current(sample.begin(), sample.end());
  std::size_t offset = 0;
  for (std::size_t width : spec.hidden) {
    std::vector<double> next(width, 0.0);
    for (std::size_t o = 0; o < width; ++o) {
      double z = 0.0;
      for (std::size_t i = 0; i < current.size(); ++i) z += params[offset + o * current.size() + i] * current[i];
      z += params[offset + width * current.size() + o];
      next[o] = (spec.activation == dna::Activation::relu) ? std::max(0.0, z) : std::tanh(z);
    }
    offset += width * current.size() + width;
    current = std::move(next);
  }
  std::vector<std::vector<double>> heads;
  for (const auto& head : spec.heads) {
    std::vector<double> out(head.dim, 0.0);
    for (std::size_t o = 0; o < head.dim; ++o) {
      double z = 0.0;
      for (std::size_t i = 0; i < current.size(); ++i) z += params[offset + o * current.size() + i] * current[i];
      z += params[offset + head.dim * current.size() + o];
      out[o] = z;
    }
    offset += head.dim * current.size() + head.dim;
    heads.push_back(std::move(out));
  }
  return heads;
}

}  // namespace oracle
