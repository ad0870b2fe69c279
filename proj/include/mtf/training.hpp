#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mtf/metrics.hpp"
#include "mtf/model.hpp"
#include "mtf/params.hpp"
#include "mtf/pipeline.hpp"

namespace mtf {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  ParamGradients m;
  ParamGradients v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update of every trainable entry. Throws ContractError
/// when a trainable entry has no gradient or a gradient has the wrong shape.
void adam_step(ModelParams& params, const ParamGradients& grads, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  /// Overrides the model's teacher-forcing probability when set.
  std::optional<double> tf_prob;
  std::uint64_t seed = 1;
  /// Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 0;
  /// Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // optimizer steps so far
  double train_loss = 0.0;
  /// Mean loss on the validation windows (NaN without validation data).
  double validation_loss = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  ModelParams best;  // lowest validation loss (training loss without validation data)
  ModelParams last;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  AdamState adam;
};

/// Called after each epoch with the record, the current best parameters and
/// whether this epoch improved on them.
using EpochCallback = std::function<void(const EpochRecord&, const ModelParams& best, bool improved)>;

/// Broadcasts a row-major H*W cell mask over K steps and S services (flat, K*S*H*W).
Tensor loss_mask(const std::vector<double>& cell_mask, std::size_t horizon, std::size_t services);

struct LossAndGradients {
  double loss = 0.0;
  ParamGradients gradients;
  /// Per-channel input moments of each standardization layer, for running statistics.
  std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>> norm_moments;
};

/// Masked MSE between the forecast of `input` and `target` (normalized units)
/// and its gradient with respect to every trainable entry.
LossAndGradients loss_and_gradients(const ModelConfig& config, const ModelParams& params, const Tensor& input,
                                    const Tensor& target, const Tensor& mask, const std::vector<bool>& forcing = {});
/// Masked MSE of the teacher-forcing-free forecast.
double forecast_loss(const ModelConfig& config, const ModelParams& params, const Tensor& input, const Tensor& target,
                     const Tensor& mask);
/// Mean forecast_loss over the windows of `data`.
double dataset_loss(const ModelConfig& config, const ModelParams& params, const WindowedDataset& data,
                    std::size_t threads = 1);

TrainResult train(const ModelConfig& config, ModelParams initial, const WindowedDataset& train_data,
                  const WindowedDataset* validation, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

/// Forecasts of every window: [N, K, S, H, W] in normalized units.
Tensor forecast_all(const ModelConfig& config, const ModelParams& params, const WindowedDataset& data,
                    std::size_t threads = 1);

/// Forecasts the test windows, denormalizes, clamps predictions at 0 and
/// computes every metric over unmasked cells.
EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const WindowedDataset& test,
                    const NormalizationStats& stats, const std::vector<ServiceInfo>& services,
                    std::size_t threads = 1);

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers; each index runs once.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace mtf
