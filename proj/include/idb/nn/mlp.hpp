#pragma once

// Dense multilayer perceptron with ReLU hidden layers and an identity output
// layer. Parameters live in one flat vector so optimizers, checkpoints and
// finite-difference checks can treat them uniformly.
//
// Flat layout, per layer l (fan_in -> fan_out):
//   W_l  fan_out x fan_in, column-major
//   b_l  fan_out
//
// Batched calls take samples as columns: inputs are (input_dim x n).

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "idb/error.hpp"
#include "idb/random.hpp"

namespace idb::nn {

struct MlpConfig {
  std::vector<int> layer_sizes;  // input, hidden..., output

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  void validate() const {
    if (layer_sizes.size() < 2)
      throw Error("mlp config needs at least an input and an output layer");
    for (int s : layer_sizes)
      if (s < 1) throw Error("mlp layer sizes must be >= 1");
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < num_layers(); ++l)
      n += static_cast<std::size_t>(layer_sizes[l] + 1) * layer_sizes[l + 1];
    return n;
  }

  bool operator==(const MlpConfig&) const = default;
};

/// Config for the actor/critic trunk used throughout: two hidden layers.
inline MlpConfig two_hidden(int input_dim, int output_dim, int h1 = 64,
                            int h2 = 32) {
  return MlpConfig{{input_dim, h1, h2, output_dim}};
}

namespace detail {
inline std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

class MlpParams {
 public:
  MlpParams() = default;

  /// All-zero parameters.
  explicit MlpParams(MlpConfig config) : config_(std::move(config)) {
    config_.validate();
    flat_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.param_count()));
    version_ = detail::next_version();
  }

  MlpParams(MlpConfig config, Eigen::VectorXd flat) : config_(std::move(config)) {
    config_.validate();
    if (static_cast<std::size_t>(flat.size()) != config_.param_count())
      throw Error("flat parameter vector has wrong length");
    flat_ = std::move(flat);
    check_finite();
    version_ = detail::next_version();
  }

  /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  static MlpParams glorot(const MlpConfig& config, Rng& rng) {
    MlpParams p(config);
    for (int l = 0; l < config.num_layers(); ++l) {
      const int fan_in = config.layer_sizes[l];
      const int fan_out = config.layer_sizes[l + 1];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      double* w = p.flat_.data() + p.weight_offset(l);
      for (int i = 0; i < fan_in * fan_out; ++i)
        w[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    p.version_ = detail::next_version();
    return p;
  }

  const MlpConfig& config() const { return config_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }

  /// Identifies the parameter values; changes on every mutation.
  std::uint64_t version() const { return version_; }

  void assign(const Eigen::VectorXd& flat) {
    if (flat.size() != flat_.size()) throw Error("flat parameter vector has wrong length");
    flat_ = flat;
    check_finite();
    version_ = detail::next_version();
  }

  /// In-place mutation through a callable taking Eigen::VectorXd&.
  template <class F>
  void update(F&& f) {
    f(flat_);
    check_finite();
    version_ = detail::next_version();
  }

  std::size_t weight_offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l)
      off += static_cast<std::size_t>(config_.layer_sizes[l] + 1) * config_.layer_sizes[l + 1];
    return off;
  }
  std::size_t bias_offset(int layer) const {
    return weight_offset(layer) +
           static_cast<std::size_t>(config_.layer_sizes[layer]) * config_.layer_sizes[layer + 1];
  }

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const {
    return {flat_.data() + weight_offset(layer), config_.layer_sizes[layer + 1],
            config_.layer_sizes[layer]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const {
    return {flat_.data() + bias_offset(layer), config_.layer_sizes[layer + 1]};
  }

 private:
  void check_finite() const {
    if (!flat_.allFinite()) throw NumericalFailure("non-finite parameters");
  }

  MlpConfig config_;
  Eigen::VectorXd flat_;
  std::uint64_t version_ = 0;
};

/// Activations saved by a batched forward pass.
struct MlpCache {
  std::uint64_t params_version = 0;
  std::vector<Eigen::MatrixXd> activations;  // [0] = input, [L] = output

  const Eigen::MatrixXd& output() const { return activations.back(); }
  Eigen::Index batch_size() const { return activations.front().cols(); }
};

/// Batched forward pass. `inputs` is (input_dim x n).
inline MlpCache mlp_forward(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  const MlpConfig& cfg = params.config();
  if (inputs.rows() != cfg.input_dim())
    throw Error("mlp input dimension mismatch: expected " + std::to_string(cfg.input_dim()) +
                ", got " + std::to_string(inputs.rows()));
  MlpCache cache;
  cache.params_version = params.version();
  cache.activations.reserve(static_cast<std::size_t>(cfg.num_layers()) + 1);
  cache.activations.push_back(inputs);
  for (int l = 0; l < cfg.num_layers(); ++l) {
    Eigen::MatrixXd z = params.weight(l) * cache.activations.back();
    z.colwise() += params.bias(l);
    if (l + 1 < cfg.num_layers()) z = z.cwiseMax(0.0);
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

/// Single-sample forward pass.
inline Eigen::VectorXd mlp_predict(const MlpParams& params, std::span<const double> input) {
  const MlpConfig& cfg = params.config();
  if (static_cast<int>(input.size()) != cfg.input_dim())
    throw Error("mlp input dimension mismatch: expected " + std::to_string(cfg.input_dim()) +
                ", got " + std::to_string(input.size()));
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(input.data(), cfg.input_dim());
  for (int l = 0; l < cfg.num_layers(); ++l) {
    Eigen::VectorXd z = params.weight(l) * a + params.bias(l);
    if (l + 1 < cfg.num_layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

/// Gradient of sum_i <output_i, output_grad_i> with respect to every
/// parameter. `output_grad` is (output_dim x n), matching the cached batch.
inline Eigen::VectorXd mlp_backward(const MlpParams& params, const MlpCache& cache,
                                    const Eigen::MatrixXd& output_grad) {
  if (cache.params_version != params.version())
    throw Error("stale cache: parameters changed since the forward pass");
  const MlpConfig& cfg = params.config();
  if (output_grad.rows() != cfg.output_dim() || output_grad.cols() != cache.batch_size())
    throw Error("mlp output gradient shape mismatch");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  Eigen::MatrixXd delta = output_grad;
  for (int l = cfg.num_layers() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a_prev = cache.activations[static_cast<std::size_t>(l)];
    const int fan_in = cfg.layer_sizes[l];
    const int fan_out = cfg.layer_sizes[l + 1];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + params.weight_offset(l), fan_out, fan_in).noalias() =
        delta * a_prev.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + params.bias_offset(l), fan_out) =
        delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = params.weight(l).transpose() * delta;
      // ReLU derivative from the post-activation (zero iff pre-activation <= 0).
      delta = (a_prev.array() > 0.0).select(back, 0.0);
    }
  }
  return grad;
}

}  // namespace idb::nn
