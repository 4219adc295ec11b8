#pragma once

// Two-pass forward training and the backpropagation baseline.
//
// One two-pass step on a batch:
//   clean pass        x_l = f_l(W_l x_{l-1})
//   output error      gamma = x_L - t
//   modulated input   xe_0 = x_0 + F gamma
//   modulated pass    xe_l = f_l(W_l xe_{l-1})    (same, frozen weights)
//   updates           dW_1 = (x_1 - xe_1) xe_0^T
//                     dW_l = (x_l - xe_l) xe_{l-1}^T,  1 < l < L
//                     dW_L = gamma xe_{L-1}^T
//   apply             W_l <- W_l - eta dW_l       (after both passes)
// Outer products are averaged over the batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "twopass/core.hpp"
#include "twopass/data.hpp"
#include "twopass/modulation.hpp"

namespace twopass {

enum class Algorithm { TwoPass, Backprop };
enum class LossMode { MSE, SoftmaxMSE };

inline std::string_view to_string(Algorithm a) { return a == Algorithm::TwoPass ? "twopass" : "backprop"; }
inline std::string_view to_string(LossMode m) { return m == LossMode::MSE ? "mse" : "softmax_mse"; }

inline Algorithm algorithm_from_string(std::string_view s) {
  if (s == "twopass") return Algorithm::TwoPass;
  if (s == "backprop") return Algorithm::Backprop;
  throw ConfigError("unknown algorithm '" + std::string(s) + "' (expected twopass or backprop)");
}

inline LossMode loss_from_string(std::string_view s) {
  if (s == "mse") return LossMode::MSE;
  if (s == "softmax_mse") return LossMode::SoftmaxMSE;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected mse or softmax_mse)");
}

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 1;
  int batch_size = 64;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::TwoPass;
  LossMode loss = LossMode::SoftmaxMSE;
  double lr_decay = 0.1;           // multiplier applied once decay starts
  double lr_decay_at = 2.0 / 3.0;  // fraction of epochs before decay; >= 1 disables
  std::int64_t max_iterations = 0; // 0: no cap
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
    if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
  }

  double learning_rate_at(int epoch) const {
    // the first epoch always runs at the base rate
    const int decay_epoch = std::max(1, static_cast<int>(std::floor(lr_decay_at * epochs)));
    return (lr_decay_at < 1.0 && epoch >= decay_epoch) ? learning_rate * lr_decay : learning_rate;
  }
};

template <typename Scalar>
struct UpdateSet {
  std::vector<Matrix<Scalar>> delta_w;

  std::size_t size() const { return delta_w.size(); }
  bool all_zero() const {
    return std::all_of(delta_w.begin(), delta_w.end(), [](const auto& d) { return (d.array() == Scalar(0)).all(); });
  }
};

struct MetricRecord {
  std::int64_t iteration = 0;
  int epoch = 0;
  double mse = 0.0;
  std::optional<double> accuracy;

  bool operator==(const MetricRecord&) const = default;
};

struct MetricsHistory {
  std::vector<MetricRecord> records;

  bool operator==(const MetricsHistory&) const = default;
};

template <typename Scalar>
using PropagateFn = std::function<ForwardTrace<Scalar>(const Network<Scalar>&, const Batch<Scalar>&)>;

/// Dense evaluation through core::forward.
template <typename Scalar>
PropagateFn<Scalar> dense_propagator() {
  return [](const Network<Scalar>& net, const Batch<Scalar>& x0) { return forward(net, x0); };
}

/// Optional customization points for train().
template <typename Scalar>
struct TrainHooks {
  /// Replaces the dense forward pass (e.g. photonic meshes). Used for both
  /// the clean and the modulated pass.
  PropagateFn<Scalar> propagate;
  /// Called after every weight update with the new network.
  std::function<void(const Network<Scalar>&)> on_weights_changed;
  /// Edits the update set before it is applied (e.g. structural masks).
  std::function<void(UpdateSet<Scalar>&)> filter_updates;
  /// Returns the accuracy to attach to the epoch's last record.
  std::function<std::optional<double>(const Network<Scalar>&, int epoch)> on_epoch_end;
};

/// Second pass over the modulated input, under the weights of the first pass.
template <typename Scalar, typename Derived>
ForwardTrace<Scalar> modulated_forward(const Network<Scalar>& net, const Eigen::MatrixBase<Derived>& x_err0) {
  return forward(net, x_err0);
}

template <typename Scalar>
UpdateSet<Scalar> two_pass_updates(const ForwardTrace<Scalar>& clean, const ForwardTrace<Scalar>& modulated,
                                   const OutputError<Scalar>& err) {
  const std::size_t depth = clean.depth();
  if (depth == 0 || modulated.depth() != depth)
    throw ShapeError("two_pass_updates: trace depths " + std::to_string(depth) + " and " +
                     std::to_string(modulated.depth()) + " differ");
  const Eigen::Index batch = clean.batch_size();
  if (modulated.batch_size() != batch || err.gamma.cols() != batch)
    throw ShapeError("two_pass_updates: batch sizes differ");
  if (err.gamma.rows() != clean.output().rows()) throw ShapeError("two_pass_updates: error length mismatch");
  for (std::size_t l = 0; l <= depth; ++l)
    if (clean.x[l].rows() != modulated.x[l].rows()) throw ShapeError("two_pass_updates: layer widths differ");

  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  UpdateSet<Scalar> updates;
  updates.delta_w.reserve(depth);
  // Hidden layers (including the first): activation difference times the
  // modulated presynaptic signal. For depth 1 the output rule covers layer 1.
  for (std::size_t l = 1; l < depth; ++l)
    updates.delta_w.emplace_back((clean.x[l] - modulated.x[l]) * modulated.x[l - 1].transpose() * inv_batch);
  updates.delta_w.emplace_back(err.gamma * modulated.x[depth - 1].transpose() * inv_batch);
  return updates;
}

/// Gradient of the batch-mean loss 0.5 * |x_L - t|^2 with respect to every
/// weight matrix. Softmax outputs go through the full softmax Jacobian.
template <typename Scalar>
UpdateSet<Scalar> backprop_updates(const Network<Scalar>& net, const ForwardTrace<Scalar>& clean,
                                   const OutputError<Scalar>& err) {
  const std::size_t depth = net.depth();
  if (clean.depth() != depth) throw ShapeError("backprop_updates: trace depth does not match network");
  if (err.gamma.rows() != net.output_dim() || err.gamma.cols() != clean.batch_size())
    throw ShapeError("backprop_updates: error shape mismatch");

  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(clean.batch_size());
  UpdateSet<Scalar> updates;
  updates.delta_w.resize(depth);

  Batch<Scalar> grad = err.gamma;  // dLoss/dx_l, then dLoss/dz_l
  for (std::size_t l = depth; l-- > 0;) {
    const auto kind = net.layer(l).activation;
    if (kind == ActivationKind::Softmax) {
      grad = softmax_vjp(clean.x[l + 1], grad);
    } else {
      grad = grad.cwiseProduct(activation_derivative(kind, clean.z[l], clean.x[l + 1]));
    }
    updates.delta_w[l] = grad * clean.x[l].transpose() * inv_batch;
    if (l > 0) grad = net.weights(l).transpose() * grad;
  }
  return updates;
}

template <typename Scalar>
Network<Scalar> apply_updates(Network<Scalar> net, const UpdateSet<Scalar>& updates, Scalar eta) {
  if (updates.size() != net.depth())
    throw ShapeError("apply_updates: " + std::to_string(updates.size()) + " updates for " +
                     std::to_string(net.depth()) + " layers");
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& d = updates.delta_w[l];
    auto& w = net.weights_mut(l);
    if (d.rows() != w.rows() || d.cols() != w.cols())
      throw ShapeError("apply_updates: update " + std::to_string(l + 1) + " has the wrong shape");
  }
  for (std::size_t l = 0; l < net.depth(); ++l) net.weights_mut(l) -= eta * updates.delta_w[l];
  return net;
}

inline void validate_loss_mode(LossMode loss, ActivationKind output_activation) {
  const bool softmax_out = output_activation == ActivationKind::Softmax;
  if (loss == LossMode::SoftmaxMSE && !softmax_out)
    throw ConfigError("softmax_mse loss requires a softmax output layer");
  if (loss == LossMode::MSE && softmax_out) throw ConfigError("mse loss expects a non-softmax output layer");
}

/// Index of the largest entry in every column.
template <typename Scalar>
std::vector<int> argmax_columns(const Batch<Scalar>& outputs) {
  std::vector<int> result(static_cast<std::size_t>(outputs.cols()));
  for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
    Eigen::Index best = 0;
    outputs.col(c).maxCoeff(&best);
    result[static_cast<std::size_t>(c)] = static_cast<int>(best);
  }
  return result;
}

/// Columns of the selected rows, cast to Scalar.
template <typename Scalar>
Batch<Scalar> gather_columns(const Matrix<double>& rows, const std::vector<std::size_t>& order, std::size_t begin,
                             std::size_t end) {
  Batch<Scalar> out(rows.cols(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t j = begin; j < end; ++j)
    out.col(static_cast<Eigen::Index>(j - begin)) =
        rows.row(static_cast<Eigen::Index>(order[j])).transpose().template cast<Scalar>();
  return out;
}

struct Evaluation {
  double mse = 0.0;
  std::optional<double> accuracy;
  std::vector<int> predictions;
  Batch<double> outputs;  // one column per sample
};

/// Full-dataset evaluation in fixed order.
template <typename Scalar>
Evaluation evaluate(const Network<Scalar>& net, const Dataset& data, PropagateFn<Scalar> propagate = {},
                    std::size_t chunk = 1000) {
  if (!propagate) propagate = dense_propagator<Scalar>();
  if (data.input_dim() != net.input_dim() || data.target_dim() != net.output_dim())
    throw ShapeError("evaluate: dataset dimensions do not match the network");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Evaluation ev;
  ev.outputs.resize(net.output_dim(), static_cast<Eigen::Index>(data.size()));
  double squared = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    const auto x0 = gather_columns<Scalar>(data.inputs, order, begin, end);
    const auto t = gather_columns<Scalar>(data.targets, order, begin, end);
    const auto trace = propagate(net, x0);
    squared += static_cast<double>((trace.output() - t).squaredNorm());
    ev.outputs.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        trace.output().template cast<double>();
  }
  ev.mse = squared / static_cast<double>(ev.outputs.size());
  if (data.is_classification()) {
    ev.predictions = argmax_columns(ev.outputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += ev.predictions[i] == data.labels[i];
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  }
  return ev;
}

template <typename Scalar>
struct TrainResult {
  Network<Scalar> network;
  MetricsHistory history;
};

/// Mini-batch training loop. Deterministic for a fixed config seed.
/// Throws DivergenceError when the batch loss or the weights stop being finite.
template <typename Scalar>
TrainResult<Scalar> train(Network<Scalar> net, const Dataset& data, const ProjectionMatrix<Scalar>& projection,
                          const TrainConfig& cfg, const TrainHooks<Scalar>& hooks = {}) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw ConfigError("training set is empty");
  if (data.input_dim() != net.input_dim() || data.target_dim() != net.output_dim())
    throw ShapeError("train: dataset is " + std::to_string(data.input_dim()) + "->" +
                     std::to_string(data.target_dim()) + " but network is " + std::to_string(net.input_dim()) +
                     "->" + std::to_string(net.output_dim()));
  validate_loss_mode(cfg.loss, net.layers().back().activation);
  if (cfg.algorithm == Algorithm::TwoPass &&
      (projection.input_dim() != net.input_dim() || projection.output_dim() != net.output_dim()))
    throw ShapeError("train: projection matrix shape does not match the network");

  const PropagateFn<Scalar> propagate = hooks.propagate ? hooks.propagate : dense_propagator<Scalar>();
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5348u));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  MetricsHistory history;
  std::int64_t iteration = 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const auto eta = static_cast<Scalar>(cfg.learning_rate_at(epoch));
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t begin = 0; begin < data.size(); begin += batch) {
      const std::size_t end = std::min(data.size(), begin + batch);
      const Batch<Scalar> x0 = gather_columns<Scalar>(data.inputs, order, begin, end);
      const Batch<Scalar> target = gather_columns<Scalar>(data.targets, order, begin, end);

      double mse = 0.0;
      try {
        const auto clean = propagate(net, x0);
        const auto err = output_error(clean.output(), target);
        mse = static_cast<double>(err.mse());
        if (!std::isfinite(mse)) throw DivergenceError(iteration, "non-finite loss");

        UpdateSet<Scalar> updates;
        if (cfg.algorithm == Algorithm::TwoPass) {
          const Batch<Scalar> x_err0 = modulate_input(x0, projection, err);
          const auto modulated = propagate(net, x_err0);
          updates = two_pass_updates(clean, modulated, err);
        } else {
          updates = backprop_updates(net, clean, err);
        }
        if (hooks.filter_updates) hooks.filter_updates(updates);
        net = apply_updates(std::move(net), updates, eta);
        for (std::size_t l = 0; l < net.depth(); ++l)
          if (!net.weights(l).allFinite()) throw DivergenceError(iteration, "non-finite weights in layer " + std::to_string(l + 1));
        if (hooks.on_weights_changed) hooks.on_weights_changed(net);
      } catch (const NumericError& e) {
        // overflow surfaces as non-finite activations inside a pass
        throw DivergenceError(iteration, e.what());
      }

      history.records.push_back({iteration, epoch, mse, std::nullopt});
      ++iteration;
      if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) {
        done = true;
        break;
      }
    }
    if (hooks.on_epoch_end && !history.records.empty())
      history.records.back().accuracy = hooks.on_epoch_end(net, epoch);
  }
  return {std::move(net), std::move(history)};
}

}  // namespace twopass
