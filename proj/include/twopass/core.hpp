#pragma once

// Dense network primitives: activations, bias-free layers and the clean
// forward pass. Everything is templated on the real scalar type; batches are
// column-major with one sample per column so that Z = W * X is a single GEMM.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "twopass/errors.hpp"

namespace twopass {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of signals, one sample per column.
template <typename Scalar>
using Batch = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ActivationKind { Identity, ReLU, Square, Sigmoid, Softmax };

inline std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Square: return "square";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Softmax: return "softmax";
  }
  return "identity";
}

inline ActivationKind activation_from_string(std::string_view name) {
  if (name == "identity") return ActivationKind::Identity;
  if (name == "relu") return ActivationKind::ReLU;
  if (name == "square") return ActivationKind::Square;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  if (name == "softmax") return ActivationKind::Softmax;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

struct LayerSpec {
  Eigen::Index in_dim = 1;
  Eigen::Index out_dim = 1;
  ActivationKind activation = ActivationKind::Identity;
};

/// Applies `kind` to every column of `z`. Softmax normalizes each column
/// independently; every other kind is elementwise.
template <typename Derived>
Batch<typename Derived::Scalar> activation_apply(ActivationKind kind,
                                                 const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  decltype(auto) zv = z.eval();
  if (!zv.allFinite()) throw NumericError("activation input contains non-finite values");
  Batch<Scalar> out(zv.rows(), zv.cols());
  switch (kind) {
    case ActivationKind::Identity:
      out = zv;
      break;
    case ActivationKind::ReLU:
      out = zv.cwiseMax(Scalar(0));
      break;
    case ActivationKind::Square:
      out = zv.cwiseProduct(zv);
      break;
    case ActivationKind::Sigmoid:
      out = zv.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
      break;
    case ActivationKind::Softmax:
      for (Eigen::Index c = 0; c < zv.cols(); ++c) {
        const Scalar peak = zv.col(c).maxCoeff();
        out.col(c) = (zv.col(c).array() - peak).exp().matrix();
        out.col(c) /= out.col(c).sum();
      }
      break;
  }
  return out;
}

/// Derivative of an elementwise activation evaluated at `z`, given the
/// already computed output `x = f(z)`. Softmax is not elementwise and is
/// handled by softmax_vjp.
template <typename Scalar>
Batch<Scalar> activation_derivative(ActivationKind kind, const Batch<Scalar>& z,
                                    const Batch<Scalar>& x) {
  switch (kind) {
    case ActivationKind::Identity:
      return Batch<Scalar>::Ones(z.rows(), z.cols());
    case ActivationKind::ReLU:
      // subgradient 0 at 0
      return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
    case ActivationKind::Square:
      return Scalar(2) * z;
    case ActivationKind::Sigmoid:
      return x.cwiseProduct((Scalar(1) - x.array()).matrix());
    case ActivationKind::Softmax:
      break;
  }
  throw ShapeError("softmax has no elementwise derivative");
}

/// Vector-Jacobian product of column-wise softmax: J^T g with J = diag(p) - p p^T.
template <typename Scalar>
Batch<Scalar> softmax_vjp(const Batch<Scalar>& p, const Batch<Scalar>& g) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inner = p.cwiseProduct(g).colwise().sum();
  return p.cwiseProduct(g - Batch<Scalar>::Ones(g.rows(), 1) * inner);
}

template <typename Scalar>
struct Layer {
  Matrix<Scalar> weights;  // out_dim x in_dim
  ActivationKind activation = ActivationKind::Identity;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
};

/// Ordered bias-free dense layers. Adjacent layers are dimension-compatible
/// at all times.
template <typename Scalar>
class Network {
 public:
  Network() = default;

  explicit Network(std::vector<Layer<Scalar>> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].weights.size() == 0) throw ShapeError("layer " + std::to_string(l + 1) + " is empty");
      if (l > 0 && layers_[l].in_dim() != layers_[l - 1].out_dim()) {
        throw ShapeError("layer " + std::to_string(l + 1) + " expects " +
                         std::to_string(layers_[l].in_dim()) + " inputs but layer " +
                         std::to_string(l) + " produces " + std::to_string(layers_[l - 1].out_dim()));
      }
    }
  }

  std::size_t depth() const { return layers_.size(); }
  Eigen::Index input_dim() const { return layers_.front().in_dim(); }
  Eigen::Index output_dim() const { return layers_.back().out_dim(); }

  const Layer<Scalar>& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<Layer<Scalar>>& layers() const { return layers_; }

  const Matrix<Scalar>& weights(std::size_t l) const { return layers_.at(l).weights; }

  /// Mutable weight access for the trainer. Shape changes are rejected by
  /// set_weights; in-place edits through this reference must keep the shape.
  Matrix<Scalar>& weights_mut(std::size_t l) { return layers_.at(l).weights; }

  void set_weights(std::size_t l, Matrix<Scalar> w) {
    auto& layer = layers_.at(l);
    if (w.rows() != layer.weights.rows() || w.cols() != layer.weights.cols())
      throw ShapeError("set_weights: shape mismatch at layer " + std::to_string(l + 1));
    layer.weights = std::move(w);
  }

  bool operator==(const Network& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].activation != other.layers_[l].activation) return false;
      if (layers_[l].weights.rows() != other.layers_[l].weights.rows() ||
          layers_[l].weights.cols() != other.layers_[l].weights.cols())
        return false;
      if (layers_[l].weights != other.layers_[l].weights) return false;
    }
    return true;
  }

  template <typename Other>
  Network<Other> cast() const {
    std::vector<Layer<Other>> out;
    for (const auto& layer : layers_) out.push_back({layer.weights.template cast<Other>(), layer.activation});
    return Network<Other>(std::move(out));
  }

 private:
  std::vector<Layer<Scalar>> layers_;
};

/// Pre-activations z_l and activations x_l for one pass over a batch.
/// Index 0 of `x` is the input; `z[l]` and `x[l + 1]` belong to layer l + 1.
template <typename Scalar>
struct ForwardTrace {
  std::vector<Batch<Scalar>> z;
  std::vector<Batch<Scalar>> x;

  std::size_t depth() const { return z.size(); }
  const Batch<Scalar>& input() const { return x.front(); }
  const Batch<Scalar>& output() const { return x.back(); }
  Eigen::Index batch_size() const { return x.front().cols(); }
};

template <typename Scalar, typename Derived>
ForwardTrace<Scalar> forward(const Network<Scalar>& net, const Eigen::MatrixBase<Derived>& x0) {
  if (net.depth() == 0) throw ShapeError("forward on an empty network");
  if (x0.rows() != net.input_dim())
    throw ShapeError("forward: input has " + std::to_string(x0.rows()) + " rows, network expects " +
                     std::to_string(net.input_dim()));
  ForwardTrace<Scalar> trace;
  trace.z.reserve(net.depth());
  trace.x.reserve(net.depth() + 1);
  trace.x.emplace_back(x0);
  if (!trace.x.front().allFinite()) throw NumericError("forward: input contains non-finite values");
  for (const auto& layer : net.layers()) {
    trace.z.emplace_back(layer.weights * trace.x.back());
    trace.x.emplace_back(activation_apply(layer.activation, trace.z.back()));
  }
  return trace;
}

/// Glorot-uniform weights in +-sqrt(6 / (in + out)), deterministic per seed.
template <typename Scalar = double>
Matrix<Scalar> init_weights(const LayerSpec& spec, std::uint64_t seed) {
  if (spec.in_dim < 1 || spec.out_dim < 1) throw ShapeError("layer dimensions must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> w(spec.out_dim, spec.in_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
  return w;
}

/// Derives an independent 64-bit stream seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename Scalar = double>
Network<Scalar> make_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  std::vector<Layer<Scalar>> layers;
  for (std::size_t l = 0; l < specs.size(); ++l)
    layers.push_back({init_weights<Scalar>(specs[l], derive_seed(seed, l)), specs[l].activation});
  return Network<Scalar>(std::move(layers));
}

}  // namespace twopass
