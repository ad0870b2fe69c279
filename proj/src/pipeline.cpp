#include "mtf/pipeline.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>

#include "mtf/error.hpp"

namespace mtf {

namespace {

// Flat cell index of every series antenna.
std::vector<std::size_t> cell_positions(const std::vector<AntennaSite>& antennas, const AntennaGrid& grid) {
  if (antennas.size() != grid.antenna_count()) {
    throw ContractError(fmt::format("grid maps {} antennas but the series has {}", grid.antenna_count(),
                                    antennas.size()));
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < grid.antenna_count(); ++i) {
    const CellIndex& c = grid.cells()[i];
    index.emplace(grid.antenna_ids()[i], c.row * grid.cols() + c.col);
  }
  std::vector<std::size_t> cells;
  cells.reserve(antennas.size());
  for (const AntennaSite& a : antennas) {
    const auto it = index.find(a.id);
    if (it == index.end()) throw ContractError("antenna " + a.id + " is not in the grid mapping");
    cells.push_back(it->second);
  }
  return cells;
}

}  // namespace

Tensor scatter_to_grid(const Tensor& volumes, const std::vector<AntennaSite>& antennas, const AntennaGrid& grid) {
  if (volumes.rank() != 3 || volumes.dim(2) != antennas.size()) {
    throw DimensionError("scatter_to_grid: expected [T, S, " + std::to_string(antennas.size()) + "], got " +
                         to_string(volumes.shape()));
  }
  const std::vector<std::size_t> cells = cell_positions(antennas, grid);
  const std::size_t T = volumes.dim(0), S = volumes.dim(1), A = antennas.size();
  const std::size_t HW = grid.rows() * grid.cols();
  Tensor out(Shape{T, S, grid.rows(), grid.cols()});
  for (std::size_t ts = 0; ts < T * S; ++ts) {
    for (std::size_t a = 0; a < A; ++a) out[ts * HW + cells[a]] = volumes[ts * A + a];
  }
  return out;
}

Tensor gather_from_grid(const Tensor& gridded, const std::vector<AntennaSite>& antennas, const AntennaGrid& grid) {
  if (gridded.rank() < 2 || gridded.dim(gridded.rank() - 2) != grid.rows() ||
      gridded.dim(gridded.rank() - 1) != grid.cols()) {
    throw DimensionError("gather_from_grid: trailing dims of " + to_string(gridded.shape()) + " are not the grid");
  }
  const std::vector<std::size_t> cells = cell_positions(antennas, grid);
  const std::size_t HW = grid.rows() * grid.cols(), A = antennas.size();
  const std::size_t outer = gridded.size() / HW;
  Shape shape(gridded.shape().begin(), gridded.shape().end() - 2);
  shape.push_back(A);
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < A; ++a) out[o * A + a] = gridded[o * HW + cells[a]];
  }
  return out;
}

WindowedDataset::WindowedDataset(Tensor normalized_grid, std::vector<double> cell_mask, std::size_t input_length,
                                 std::size_t horizon, std::size_t stride, std::int64_t start_epoch,
                                 std::int64_t step_seconds)
    : grid_(std::move(normalized_grid)),
      mask_(std::move(cell_mask)),
      input_length_(input_length),
      horizon_(horizon),
      start_epoch_(start_epoch),
      step_seconds_(step_seconds) {
  if (grid_.rank() != 4) throw DimensionError("windowed dataset expects [T, S, H, W], got " + to_string(grid_.shape()));
  if (mask_.size() != grid_.dim(2) * grid_.dim(3)) throw DimensionError("cell mask does not match the grid");
  if (input_length == 0 || horizon == 0 || stride == 0) {
    throw ContractError("input length, horizon and stride must be positive");
  }
  const std::size_t T = grid_.dim(0);
  if (T < input_length + horizon) {
    throw ContractError(fmt::format("series of {} bins is shorter than one window of {} + {}", T, input_length,
                                    horizon));
  }
  for (std::size_t s = 0; s + input_length + horizon <= T; s += stride) starts_.push_back(s);
}

ForecastWindow WindowedDataset::window(std::size_t i) const {
  const std::size_t start = starts_.at(i);
  const std::size_t snapshot = grid_.size() / grid_.dim(0);
  const auto slice = [&](std::size_t begin, std::size_t count) {
    const auto first = grid_.data().begin() + static_cast<std::ptrdiff_t>(begin * snapshot);
    Shape shape = grid_.shape();
    shape[0] = count;
    return Tensor(std::move(shape), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * snapshot)));
  };
  return ForecastWindow{slice(start, input_length_), slice(start + input_length_, horizon_),
                        start_epoch_ + static_cast<std::int64_t>(start) * step_seconds_};
}

std::vector<ForecastWindow> WindowedDataset::materialize() const {
  std::vector<ForecastWindow> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(window(i));
  return out;
}

WindowedDataset window_dataset(const TrafficSeries& series, const AntennaGrid& grid, const NormalizationStats& stats,
                               std::size_t input_length, std::size_t horizon, std::size_t stride) {
  series.validate();
  if (series.length() < input_length + horizon) {
    throw ContractError(fmt::format("series of {} bins is shorter than one window of {} + {}", series.length(),
                                    input_length, horizon));
  }
  // Normalize before scattering so masked cells stay exactly zero.
  Tensor gridded = scatter_to_grid(normalize(series.volumes, stats, 1), series.antennas, grid);
  return WindowedDataset(std::move(gridded), grid.mask(), input_length, horizon, stride, series.start_epoch,
                         series.step_seconds);
}

std::pair<TrafficSeries, TrafficSeries> chronological_split(const TrafficSeries& series, double train_frac,
                                                            std::size_t min_length) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("train fraction must lie in (0, 1)");
  const std::size_t n = series.length();
  const auto cut = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (cut < min_length || n - cut < min_length) {
    throw ContractError(fmt::format("split of {} bins at {} leaves a part shorter than {} bins", n, cut, min_length));
  }
  return {series.slice(0, cut), series.slice(cut, n - cut)};
}

void PipelineConfig::validate() const {
  if (input_length == 0 || horizon == 0) throw ContractError("input length and horizon must be positive");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("train fraction must lie in (0, 1)");
  if (!(validation_frac >= 0.0 && validation_frac < 1.0)) throw ContractError("validation fraction must lie in [0, 1)");
  if (train_stride == 0 || eval_stride == 0) throw ContractError("strides must be positive");
  if (!(activity_threshold > 0.0 && activity_threshold <= 1.0)) {
    throw ContractError("activity threshold must lie in (0, 1]");
  }
}

PreparedData prepare_data(const TrafficSeries& filtered, const AntennaGrid& grid, const PipelineConfig& config) {
  config.validate();
  filtered.validate();
  const std::size_t window = config.input_length + config.horizon;
  auto [training, test] = chronological_split(filtered, config.train_frac, window);
  PreparedData out;
  out.stats = compute_stats(training);
  out.test_bins = test.length();
  out.test = window_dataset(test, grid, out.stats, config.input_length, config.horizon, config.eval_stride);
  const auto held = static_cast<std::size_t>(
      std::llround(config.validation_frac * static_cast<double>(training.length())));
  if (held == 0) {
    out.train_bins = training.length();
    out.train = window_dataset(training, grid, out.stats, config.input_length, config.horizon, config.train_stride);
  } else {
    if (held < window || training.length() - held < window) {
      throw ContractError(fmt::format("training portion of {} bins is too short for a validation tail of {}",
                                      training.length(), held));
    }
    const std::size_t fit = training.length() - held;
    out.train_bins = fit;
    out.validation_bins = held;
    out.train = window_dataset(training.slice(0, fit), grid, out.stats, config.input_length, config.horizon,
                               config.train_stride);
    out.validation = window_dataset(training.slice(fit, held), grid, out.stats, config.input_length,
                                    config.horizon, config.train_stride);
  }
  out.series = filtered;
  out.grid = grid;
  return out;
}

}  // namespace mtf
