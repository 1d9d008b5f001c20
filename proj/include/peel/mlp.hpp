#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "peel/matrix.hpp"
#include "peel/rng.hpp"

namespace peel {

template <class T>
struct DenseLayer {
  MatrixT<T> weight;  // out x in
  std::vector<T> bias;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

template <class T>
struct MlpTape {
  std::vector<MatrixT<T>> activations;  // input, then each hidden tanh output
};

// Stack of tanh hidden layers followed by a linear output layer. The output
// non-linearity (sigmoid, softmax) is applied by the caller.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output) {
    std::size_t prev = input;
    for (std::size_t w : hidden) {
      layers_.push_back({MatrixT<T>(w, prev), std::vector<T>(w, T(0))});
      prev = w;
    }
    layers_.push_back({MatrixT<T>(output, prev), std::vector<T>(output, T(0))});
  }

  // Glorot-uniform weights, zero biases.
  void InitGlorot(Rng& rng) {
    for (auto& layer : layers_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
      for (auto& w : layer.weight.flat()) {
        w = static_cast<T>((2.0 * rng.Uniform01() - 1.0) * limit);
      }
      std::fill(layer.bias.begin(), layer.bias.end(), T(0));
    }
  }

  std::size_t input_dim() const { return layers_.front().in(); }
  std::size_t output_dim() const { return layers_.back().out(); }
  std::size_t hidden_layers() const { return layers_.size() - 1; }
  std::vector<DenseLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer<T>>& layers() const noexcept { return layers_; }

  // rows x input -> rows x output (pre-activation).
  MatrixT<T> Forward(const MatrixT<T>& input, MlpTape<T>* tape = nullptr) const {
    if (tape != nullptr) tape->activations.assign(1, input);
    MatrixT<T> h = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      MatrixT<T> next = Affine(layers_[l], h);
      if (l + 1 < layers_.size()) {
        for (auto& x : next.flat()) x = std::tanh(x);
        if (tape != nullptr) tape->activations.push_back(next);
      }
      h = std::move(next);
    }
    return h;
  }

  // Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
  MatrixT<T> Backward(const MlpTape<T>& tape, const MatrixT<T>& d_output, Mlp& grad) const {
    MatrixT<T> delta = d_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const MatrixT<T>& in = tape.activations[l];
      const auto& layer = layers_[l];
      auto& g = grad.layers_[l];
      const std::size_t rows = in.rows();
      MatrixT<T> d_in(rows, layer.in());
      for (std::size_t r = 0; r < rows; ++r) {
        const auto x = in.row(r);
        const auto dy = delta.row(r);
        auto dx = d_in.row(r);
        for (std::size_t o = 0; o < layer.out(); ++o) {
          const T go = dy[o];
          if (go == T(0)) continue;
          g.bias[o] += go;
          auto gw = g.weight.row(o);
          const auto w = layer.weight.row(o);
          for (std::size_t i = 0; i < layer.in(); ++i) {
            gw[i] += go * x[i];
            dx[i] += go * w[i];
          }
        }
      }
      if (l > 0) {
        // in == tanh output of layer l-1
        for (std::size_t k = 0; k < d_in.size(); ++k) {
          const T a = in.flat()[k];
          d_in.flat()[k] *= (T(1) - a * a);
        }
      }
      delta = std::move(d_in);
    }
    return delta;
  }

  Mlp ZerosLike() const {
    Mlp z = *this;
    for (auto& layer : z.layers_) {
      layer.weight.fill(T(0));
      std::fill(layer.bias.begin(), layer.bias.end(), T(0));
    }
    return z;
  }

  template <class U>
  Mlp<U> cast() const {
    Mlp<U> out;
    for (const auto& layer : layers_) {
      out.layers().push_back(
          {layer.weight.template cast<U>(), std::vector<U>(layer.bias.begin(), layer.bias.end())});
    }
    return out;
  }

  void AppendTensors(std::vector<std::span<T>>& out) {
    for (auto& layer : layers_) {
      out.push_back(layer.weight.flat());
      out.push_back(layer.bias);
    }
  }
  void AppendTensors(std::vector<std::span<const T>>& out) const {
    for (const auto& layer : layers_) {
      out.push_back(layer.weight.flat());
      out.push_back(layer.bias);
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  static MatrixT<T> Affine(const DenseLayer<T>& layer, const MatrixT<T>& h) {
    MatrixT<T> out(h.rows(), layer.out());
    for (std::size_t r = 0; r < h.rows(); ++r) {
      const auto x = h.row(r);
      auto y = out.row(r);
      for (std::size_t o = 0; o < layer.out(); ++o) {
        const auto w = layer.weight.row(o);
        T acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in(); ++i) acc += w[i] * x[i];
        y[o] = acc;
      }
    }
    return out;
  }

  std::vector<DenseLayer<T>> layers_;
};

}  // namespace peel
