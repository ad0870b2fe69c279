#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mtf/grid_mapping.hpp"
#include "mtf/tensor.hpp"
#include "mtf/traffic.hpp"

namespace mtf {

/// One sample: T_in normalized input snapshots and the K that follow.
struct ForecastWindow {
  Tensor input;   // [T_in, S, H, W]
  Tensor target;  // [K, S, H, W]
  std::int64_t start_epoch = 0;  // timestamp of the first input snapshot
};

/// Places the antenna axis of [T, S, A] volumes onto [T, S, H, W]; masked cells are 0.
Tensor scatter_to_grid(const Tensor& volumes, const std::vector<AntennaSite>& antennas, const AntennaGrid& grid);
/// Inverse of scatter_to_grid: [..., H, W] -> [..., A] in the series' antenna order.
Tensor gather_from_grid(const Tensor& gridded, const std::vector<AntennaSite>& antennas, const AntennaGrid& grid);

/// Sliding windows over a gridded, normalized series. Windows are built on
/// demand so long series do not hold every sample in memory.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(Tensor normalized_grid, std::vector<double> cell_mask, std::size_t input_length,
                  std::size_t horizon, std::size_t stride, std::int64_t start_epoch, std::int64_t step_seconds);

  std::size_t size() const { return starts_.size(); }
  bool empty() const { return starts_.empty(); }
  ForecastWindow window(std::size_t i) const;
  std::vector<ForecastWindow> materialize() const;

  std::size_t input_length() const { return input_length_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t services() const { return grid_.rank() == 4 ? grid_.dim(1) : 0; }
  std::size_t rows() const { return grid_.rank() == 4 ? grid_.dim(2) : 0; }
  std::size_t cols() const { return grid_.rank() == 4 ? grid_.dim(3) : 0; }
  /// Row-major H*W mask: 1 for antenna cells, 0 for masked cells.
  const std::vector<double>& cell_mask() const { return mask_; }
  const Tensor& normalized_grid() const { return grid_; }
  std::size_t start_bin(std::size_t i) const { return starts_.at(i); }

 private:
  Tensor grid_;  // [T, S, H, W]
  std::vector<double> mask_;
  std::vector<std::size_t> starts_;
  std::size_t input_length_ = 0;
  std::size_t horizon_ = 0;
  std::int64_t start_epoch_ = 0;
  std::int64_t step_seconds_ = kBinSeconds;
};

/// Normalizes `series` with `stats`, scatters it onto `grid`, and cuts
/// windows every `stride` bins.
WindowedDataset window_dataset(const TrafficSeries& series, const AntennaGrid& grid, const NormalizationStats& stats,
                               std::size_t input_length, std::size_t horizon, std::size_t stride = 1);

/// Prefix/suffix split at round(train_frac * length); both parts must hold at
/// least `min_length` bins.
std::pair<TrafficSeries, TrafficSeries> chronological_split(const TrafficSeries& series, double train_frac = 0.8,
                                                            std::size_t min_length = 24);

struct PipelineConfig {
  std::size_t input_length = 12;
  std::size_t horizon = 12;
  double train_frac = 0.8;
  /// Tail of the training portion held out for early stopping.
  double validation_frac = 0.1;
  /// Window stride of the fit and validation portions.
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;
  double activity_threshold = 0.9;

  void validate() const;
};

/// Everything the models consume, derived from one filtered series.
struct PreparedData {
  TrafficSeries series;  // filtered
  AntennaGrid grid;
  NormalizationStats stats;  // from the whole training portion
  std::size_t train_bins = 0;
  std::size_t validation_bins = 0;
  std::size_t test_bins = 0;
  WindowedDataset train;
  WindowedDataset validation;
  WindowedDataset test;
};

/// Splits chronologically into fit / validation / test portions. `grid` must
/// cover exactly the antennas of `filtered`.
PreparedData prepare_data(const TrafficSeries& filtered, const AntennaGrid& grid, const PipelineConfig& config);

}  // namespace mtf
