#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "evsnn/event.hpp"
#include "evsnn/network.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

// Target firing rates: the labeled class should spike on 80% of the steps,
// every other class on 20%.
struct SpikeCountLossTargets {
  double correct_rate = 0.8;
  double incorrect_rate = 0.2;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // same layout as the spike input
};

// MSE between per-class firing rates (spike count / T) and the targets,
// averaged over batch and classes. spikes: [T, B, num_classes],
// labels: one class index per batch element.
LossResult spike_count_loss(const Tensor& spikes, const std::vector<std::size_t>& labels,
                            const SpikeCountLossTargets& targets);

// Single-sample form used by the training loop: `batch_size` is the
// denominator of the batch mean, so summing these over a mini-batch
// reproduces spike_count_loss exactly. train: [T, num_classes].
LossResult sample_spike_count_loss(const Tensor& train, std::size_t label,
                                   const SpikeCountLossTargets& targets,
                                   std::size_t batch_size);

struct AdamParams {
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed set of parameter tensors. Moments are
// allocated on the first step; the step counter increments once per call.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamParams params);

  // weights[i] -= lr * m_hat / (sqrt(v_hat) + eps). Throws on non-finite
  // gradients.
  void step(const std::vector<Tensor*>& weights, const std::vector<const Tensor*>& grads);

  std::size_t step_count() const { return steps_; }

 private:
  AdamParams params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t steps_ = 0;
};

struct MetricsRow {
  std::size_t epoch = 0;      // 1-based
  std::size_t iteration = 0;  // 1-based within the epoch
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;

  bool operator==(const MetricsRow&) const = default;
};

// CSV with header epoch,iteration,train_loss,train_acc,val_loss,val_acc.
// Doubles are written in shortest round-trip form, so reading the file back
// reproduces the history exactly; empty optional fields stay blank.
void export_metrics(const std::vector<MetricsRow>& history, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 25;
  std::uint64_t seed = 0;
  bool shuffle = true;
  SpikeCountLossTargets targets;
  AdamParams adam;
  std::size_t threads = 1;  // per-sample parallelism; results are identical
                            // for any thread count
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  NetworkWeights weights;
  std::vector<MetricsRow> history;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

// The epoch loop: seeded shuffle, mini-batches of batch_size (final partial
// batch kept), per batch forward -> loss -> backward -> Adam. Batches are
// binned to frames lazily, one mini-batch at a time. When val_set is
// non-empty it is evaluated after each epoch and recorded on that epoch's
// last row. Bit-deterministic given (seed, dataset, config).
TrainResult train(const std::vector<EventBatch>& train_set,
                  const std::vector<EventBatch>& val_set, const BinningSpec& binning,
                  const NetworkConfig& net_config, const TrainConfig& config,
                  const ProgressFn& progress = nullptr);

// Single pass, no weight updates. Loss is the batch mean over the whole set.
EvalResult evaluate(const std::vector<EventBatch>& dataset, const NetworkWeights& weights,
                    const NetworkConfig& net_config, const BinningSpec& binning,
                    const SpikeCountLossTargets& targets = {}, std::size_t threads = 1);

}  // namespace evsnn
