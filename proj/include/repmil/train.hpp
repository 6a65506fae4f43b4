#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "repmil/backward.hpp"
#include "repmil/model.hpp"
#include "repmil/optim.hpp"
#include "repmil/rng.hpp"

namespace repmil {

template <typename T>
struct TrainingBag {
  std::string sample_id;
  SparseRows<T> x;
  std::size_t label = 0;
  std::vector<T> covariates;
  std::optional<std::size_t> location;

  BagExample<T> example() const { return {&x, label, covariates, location}; }
};

struct EpochMetrics {
  double sample = 0;
  double instance = 0;
  double total = 0;
};

// Stream ids for the counter-based generator, one namespace per use.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kOrder = 2;
inline constexpr std::uint64_t kDropout = 3;
}  // namespace streams

template <typename T>
class Trainer {
 public:
  Trainer(ModelConfig mcfg, LossConfig lcfg, TrainConfig tcfg)
      : mcfg_(mcfg),
        lcfg_(lcfg),
        tcfg_(tcfg),
        params_(ModelParams<T>::initialize(mcfg, CounterRng(tcfg.seed).split(streams::kInit))),
        state_(OptimizerState<T>::zeros(mcfg)) {
    mcfg_.validate();
    lcfg_.validate();
    tcfg_.validate();
  }

  Trainer(ModelConfig mcfg, LossConfig lcfg, TrainConfig tcfg, ModelParams<T> params)
      : Trainer(mcfg, lcfg, tcfg) {
    params.check_shapes(mcfg);
    params_ = std::move(params);
  }

  // One pass, batch size 1, over a seed-determined permutation. Each bag's
  // dropout stream depends on (seed, epoch, bag index), not on visit order.
  EpochMetrics train_epoch(const std::vector<TrainingBag<T>>& bags) {
    if (bags.empty()) throw Error("no training bags");
    const CounterRng root(tcfg_.seed);
    std::vector<std::size_t> order(bags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng order_rng = root.split(streams::kOrder).split(epoch_);
    order_rng.shuffle(order);
    const CounterRng dropout_root = root.split(streams::kDropout).split(epoch_);

    EpochMetrics acc;
    for (std::size_t idx : order) {
      CounterRng rng = dropout_root.split(idx);
      auto res = compute_gradients(bags[idx].example(), params_, mcfg_, lcfg_, Mode::train, &rng);
      adam_step(params_, res.grads, state_, tcfg_);
      acc.sample += static_cast<double>(res.loss.sample);
      acc.instance += static_cast<double>(res.loss.instance);
      acc.total += static_cast<double>(res.loss.total);
    }
    const double nb = static_cast<double>(bags.size());
    acc.sample /= nb;
    acc.instance /= nb;
    acc.total /= nb;
    ++epoch_;
    history_.push_back(acc);
    return acc;
  }

  const std::vector<EpochMetrics>& fit(const std::vector<TrainingBag<T>>& bags) {
    while (epoch_ < tcfg_.epochs) train_epoch(bags);
    return history_;
  }

  BagOutput<T> predict(const SparseRows<T>& x, std::span<const T> covariates = {}) const {
    return forward(x, params_, mcfg_, Mode::eval, nullptr, covariates);
  }

  const ModelParams<T>& params() const noexcept { return params_; }
  const OptimizerState<T>& optimizer_state() const noexcept { return state_; }
  const ModelConfig& model_config() const noexcept { return mcfg_; }
  const LossConfig& loss_config() const noexcept { return lcfg_; }
  const TrainConfig& train_config() const noexcept { return tcfg_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const std::vector<EpochMetrics>& history() const noexcept { return history_; }

 private:
  ModelConfig mcfg_;
  LossConfig lcfg_;
  TrainConfig tcfg_;
  ModelParams<T> params_;
  OptimizerState<T> state_;
  std::size_t epoch_ = 0;
  std::vector<EpochMetrics> history_;
};

}  // namespace repmil
