#pragma once

// One value network per pre-generated input sequence. Training is restricted
// to that fixed set so each network specializes to its sequence's future.

#include <map>
#include <span>
#include <vector>

#include "idb/baselines/value.hpp"

namespace idb {

class MultiValueBaseline {
 public:
  MultiValueBaseline() = default;

  /// Networks are initialized from independent seeds derived from `seed`.
  MultiValueBaseline(const std::vector<SequenceId>& ids, const nn::MlpConfig& net, double lr,
                     std::uint64_t seed) {
    if (ids.empty()) throw Error("multi-value baseline needs at least one sequence");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!index_.emplace(ids[i], i).second) throw Error("duplicate sequence id");
      Rng rng(derive_seed(seed, {ids[i]}));
      nets_.push_back(nn::MlpParams::glorot(net, rng));
      opts_.push_back(nn::AdamState::for_params(nets_.back(), lr));
    }
    ids_ = ids;
  }

  std::size_t size() const { return nets_.size(); }
  const std::vector<SequenceId>& ids() const { return ids_; }
  bool contains(SequenceId id) const { return index_.count(id) != 0; }

  std::size_t index_of(SequenceId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("sequence not in training set");
    return it->second;
  }

  const nn::MlpParams& network(SequenceId id) const { return nets_[index_of(id)]; }
  nn::MlpParams& network(SequenceId id) { return nets_[index_of(id)]; }
  const nn::MlpParams& network_at(std::size_t i) const { return nets_.at(i); }
  nn::AdamState& optimizer(SequenceId id) { return opts_[index_of(id)]; }

  double learning_rate() const { return opts_.empty() ? 0.0 : opts_.front().lr; }
  void set_learning_rate(double lr) {
    for (auto& o : opts_) o.lr = lr;
  }

  std::vector<double> values(const Trajectory& traj, const ReturnConfig& cfg) const {
    return predict_values(network(traj.input_seq_id), traj, cfg);
  }

  /// Replaces the network list (checkpoint restore). Optimizer state resets.
  void restore(std::size_t i, const nn::MlpParams& params, double lr) {
    nets_.at(i) = params;
    opts_.at(i) = nn::AdamState::for_params(params, lr);
  }

 private:
  std::vector<SequenceId> ids_;
  std::map<SequenceId, std::size_t> index_;
  std::vector<nn::MlpParams> nets_;
  std::vector<nn::AdamState> opts_;
};

/// Updates only the network keyed by `input_seq`, with `steps` optimizer
/// steps on the mean value loss. Returns the mean loss before the first step.
inline double multivalue_train_step(MultiValueBaseline& models, const InputSequence& input_seq,
                                    std::span<const Trajectory> trajectories,
                                    const ReturnConfig& cfg, int steps = 1) {
  models.index_of(input_seq.id());  // rejects unknown sequences before any work
  if (trajectories.empty()) throw Error("no trajectories to fit");
  for (const auto& t : trajectories)
    if (t.input_seq_id != input_seq.id()) throw Error("trajectory was generated by a different input sequence");
  ValueData data = make_value_data(trajectories, cfg);
  double first = 0.0;
  for (int s = 0; s < steps; ++s) {
    const double l = fit_value_step(models.network(input_seq.id()), models.optimizer(input_seq.id()), data);
    if (s == 0) first = l;
  }
  return first;
}

}  // namespace idb
