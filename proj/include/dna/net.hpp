#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dna/matrix.hpp"
#include "dna/rng.hpp"

namespace dna {

enum class Activation { relu, tanh };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + s);
}

enum class InitScheme { orthogonal, uniform_fanin };

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "orthogonal") return InitScheme::orthogonal;
  if (s == "uniform_fanin") return InitScheme::uniform_fanin;
  throw std::invalid_argument("unknown init scheme: " + s);
}

struct HeadSpec {
  std::string name;
  std::size_t dim = 1;
};

struct NetSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::vector<HeadSpec> heads;
  Activation activation = Activation::relu;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("NetSpec: input_dim must be positive");
    if (hidden.empty()) throw std::invalid_argument("NetSpec: at least one hidden layer");
    for (std::size_t h : hidden)
      if (h == 0) throw std::invalid_argument("NetSpec: hidden width must be positive");
    if (heads.empty()) throw std::invalid_argument("NetSpec: at least one head");
    for (const auto& head : heads)
      if (head.dim == 0) throw std::invalid_argument("NetSpec: head dim must be positive");
  }
};

// Flat parameter vector for one network plus the Adam moments that move it.
struct ParameterBlock {
  std::vector<double> params;
  std::vector<double> grads;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  long long step_count = 0;

  void resize(std::size_t n) {
    params.assign(n, 0.0);
    grads.assign(n, 0.0);
    adam_m.assign(n, 0.0);
    adam_v.assign(n, 0.0);
    step_count = 0;
  }

  void zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }
};

inline std::vector<double> snapshot_params(const ParameterBlock& block) { return block.params; }

// Fixed-topology multi-layer perceptron over a flat parameter vector:
// a stack of hidden layers followed by one linear layer per head, all fed
// from the top hidden activation. Forward and backward are exact analytic
// passes; there is no graph machinery.
class Mlp {
 public:
  explicit Mlp(NetSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t offset = 0;
    std::size_t in = spec_.input_dim;
    for (std::size_t width : spec_.hidden) {
      hidden_layers_.push_back(Layer{in, width, offset, offset + in * width});
      offset += in * width + width;
      in = width;
    }
    for (const auto& head : spec_.heads) {
      head_layers_.push_back(Layer{in, head.dim, offset, offset + in * head.dim});
      offset += in * head.dim + head.dim;
    }
    param_count_ = offset;
  }

  const NetSpec& spec() const { return spec_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t top_width() const { return spec_.hidden.back(); }

  int head_index(const std::string& name) const {
    for (std::size_t i = 0; i < spec_.heads.size(); ++i)
      if (spec_.heads[i].name == name) return static_cast<int>(i);
    throw std::invalid_argument("Mlp: no head named " + name);
  }

  struct Cache {
    Matrix input;
    std::vector<Matrix> hidden_acts;  // post-activation, one per hidden layer
  };

  void forward(std::span<const double> params, const Matrix& input,
               std::vector<Matrix>& head_outputs, Cache* cache = nullptr) const {
    check_params(params);
    if (input.cols != spec_.input_dim)
      throw std::invalid_argument("Mlp::forward: input dim mismatch");
    if (cache) {
      cache->input = input;
      cache->hidden_acts.resize(hidden_layers_.size());
    }
    Matrix current = input;
    Matrix next;
    for (std::size_t l = 0; l < hidden_layers_.size(); ++l) {
      linear(params, hidden_layers_[l], current, next);
      apply_activation(next);
      if (cache) cache->hidden_acts[l] = next;
      current = std::move(next);
      next = Matrix{};
    }
    head_outputs.resize(head_layers_.size());
    for (std::size_t h = 0; h < head_layers_.size(); ++h)
      linear(params, head_layers_[h], current, head_outputs[h]);
  }

  // Accumulates d(sum over batch of outputs . head_output_grads)/d(params)
  // into grads. The cache must come from a forward pass over the same params.
  void backward(std::span<const double> params, const Cache& cache,
                const std::vector<Matrix>& head_output_grads, std::span<double> grads) const {
    check_params(params);
    if (grads.size() != param_count_)
      throw std::invalid_argument("Mlp::backward: grads size mismatch");
    if (head_output_grads.size() != head_layers_.size())
      throw std::invalid_argument("Mlp::backward: head grad count mismatch");
    const std::size_t batch = cache.input.rows;
    const Matrix& top = cache.hidden_acts.back();

    Matrix dhidden(batch, top.cols);
    for (std::size_t h = 0; h < head_layers_.size(); ++h)
      linear_backward(params, head_layers_[h], top, head_output_grads[h], grads, &dhidden);

    for (std::size_t l = hidden_layers_.size(); l-- > 0;) {
      const Matrix& post = cache.hidden_acts[l];
      Matrix dz = std::move(dhidden);
      for (std::size_t i = 0; i < dz.data.size(); ++i)
        dz.data[i] *= activation_grad(post.data[i]);
      const Matrix& below = (l == 0) ? cache.input : cache.hidden_acts[l - 1];
      if (l == 0) {
        linear_backward(params, hidden_layers_[l], below, dz, grads, nullptr);
      } else {
        dhidden.resize(batch, below.cols);
        linear_backward(params, hidden_layers_[l], below, dz, grads, &dhidden);
      }
    }
  }

  // Hidden layers follow the selected scheme; heads are always initialized
  // near zero (orthogonal rows scaled by head_gain, zero bias) so fresh
  // policies are near-uniform and fresh value estimates near zero.
  void init_params(std::span<double> params, Rng& rng, InitScheme scheme,
                   double head_gain = 0.01) const {
    check_params(params);
    const double hidden_gain =
        (spec_.activation == Activation::relu) ? std::sqrt(2.0) : 1.0;
    for (const auto& layer : hidden_layers_) init_layer(params, layer, rng, scheme, hidden_gain);
    for (const auto& layer : head_layers_)
      init_layer(params, layer, rng, InitScheme::orthogonal, head_gain);
  }

 private:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w_off = 0;  // weights, row-major (out x in)
    std::size_t b_off = 0;
  };

  void check_params(std::span<const double> params) const {
    if (params.size() != param_count_)
      throw std::invalid_argument("Mlp: parameter vector size mismatch");
  }

  static void linear(std::span<const double> params, const Layer& layer, const Matrix& x,
                     Matrix& z) {
    z.resize(x.rows, layer.out);
    const double* w = params.data() + layer.w_off;
    const double* b = params.data() + layer.b_off;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto xr = x.row(r);
      auto zr = z.row(r);
      for (std::size_t o = 0; o < layer.out; ++o)
        zr[o] = b[o] + dot(xr, {w + o * layer.in, layer.in});
    }
  }

  // dz: gradient at this layer's output. Accumulates weight/bias grads and,
  // when dx is non-null, writes the gradient at the layer's input.
  static void linear_backward(std::span<const double> params, const Layer& layer,
                              const Matrix& x, const Matrix& dz, std::span<double> grads,
                              Matrix* dx) {
    const double* w = params.data() + layer.w_off;
    double* dw = grads.data() + layer.w_off;
    double* db = grads.data() + layer.b_off;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto xr = x.row(r);
      const auto dzr = dz.row(r);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double g = dzr[o];
        if (g == 0.0) continue;
        axpy(g, xr, {dw + o * layer.in, layer.in});
        db[o] += g;
        if (dx) axpy(g, {w + o * layer.in, layer.in}, dx->row(r));
      }
    }
  }

  void apply_activation(Matrix& z) const {
    if (spec_.activation == Activation::relu) {
      for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    } else {
      for (double& v : z.data) v = std::tanh(v);
    }
  }

  double activation_grad(double post) const {
    if (spec_.activation == Activation::relu) return post > 0.0 ? 1.0 : 0.0;
    return 1.0 - post * post;
  }

  static void init_layer(std::span<double> params, const Layer& layer, Rng& rng,
                         InitScheme scheme, double gain) {
    double* w = params.data() + layer.w_off;
    double* b = params.data() + layer.b_off;
    if (scheme == InitScheme::uniform_fanin) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
      for (std::size_t i = 0; i < layer.out * layer.in; ++i) w[i] = rng.uniform(-bound, bound);
      for (std::size_t i = 0; i < layer.out; ++i) b[i] = rng.uniform(-bound, bound);
      return;
    }
    orthogonal_fill(w, layer.out, layer.in, gain, rng);
    for (std::size_t i = 0; i < layer.out; ++i) b[i] = 0.0;
  }

  // Gram-Schmidt orthogonalization of a Gaussian matrix; rows are
  // orthonormalized when out <= in, columns otherwise.
  static void orthogonal_fill(double* w, std::size_t out, std::size_t in, double gain, Rng& rng) {
    for (std::size_t i = 0; i < out * in; ++i) w[i] = rng.normal();
    const bool by_rows = out <= in;
    const std::size_t vectors = by_rows ? out : in;
    const std::size_t dim = by_rows ? in : out;
    auto at = [&](std::size_t v, std::size_t d) -> double& {
      return by_rows ? w[v * in + d] : w[d * in + v];
    };
    for (std::size_t v = 0; v < vectors; ++v) {
      for (std::size_t prev = 0; prev < v; ++prev) {
        double proj = 0.0;
        for (std::size_t d = 0; d < dim; ++d) proj += at(v, d) * at(prev, d);
        for (std::size_t d = 0; d < dim; ++d) at(v, d) -= proj * at(prev, d);
      }
      double norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) norm += at(v, d) * at(v, d);
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        for (std::size_t d = 0; d < dim; ++d) at(v, d) = rng.normal();
        --v;
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) at(v, d) /= norm;
    }
    for (std::size_t i = 0; i < out * in; ++i) w[i] *= gain;
  }

  NetSpec spec_;
  std::vector<Layer> hidden_layers_;
  std::vector<Layer> head_layers_;
  std::size_t param_count_ = 0;
};

}  // namespace dna
