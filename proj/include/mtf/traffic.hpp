#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mtf/grid_mapping.hpp"
#include "mtf/tensor.hpp"

namespace mtf {

inline constexpr std::int64_t kBinSeconds = 300;

inline constexpr std::array<std::string_view, 7> kServiceCategories{
    "streaming", "social media", "web", "chat", "cloud", "gaming", "miscellaneous"};

bool is_known_category(std::string_view category);

struct ServiceInfo {
  std::string id;
  std::string name;
  std::string category;
  friend bool operator==(const ServiceInfo&, const ServiceInfo&) = default;
};

/// Per-antenna, per-service byte counts on a uniform 5-minute time grid.
struct TrafficSeries {
  std::int64_t start_epoch = 0;  // UTC seconds of bin 0
  std::int64_t step_seconds = kBinSeconds;
  std::vector<AntennaSite> antennas;
  std::vector<ServiceInfo> services;
  Tensor volumes;  // [T, S, A]

  std::size_t length() const { return volumes.rank() == 3 ? volumes.dim(0) : 0; }
  std::size_t service_count() const { return services.size(); }
  std::size_t antenna_count() const { return antennas.size(); }
  std::int64_t timestamp(std::size_t bin) const { return start_epoch + static_cast<std::int64_t>(bin) * step_seconds; }
  double at(std::size_t t, std::size_t s, std::size_t a) const {
    return volumes[(t * services.size() + s) * antennas.size() + a];
  }
  double total_volume() const;
  /// Bins [begin, begin + count).
  TrafficSeries slice(std::size_t begin, std::size_t count) const;
  void validate() const;
};

/// Reads `timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down`
/// rows (lines starting with '#' are comments). Volume = up + down. Antennas
/// and services are sorted by id; absent (time, antenna, service) rows are 0.
/// Antenna coordinates are projected to local meters.
TrafficSeries ingest_csv(const std::string& path);
/// Writes the ingest format. Uplink gets floor(volume * up_share) of each volume.
void write_csv(const TrafficSeries& series, const std::string& path, const std::vector<std::string>& preamble = {},
               double up_share = 0.15);

std::vector<ServiceInfo> read_catalog(const std::string& path);
void write_catalog(const std::vector<ServiceInfo>& services, const std::string& path,
                   const std::vector<std::string>& preamble = {});
/// Fills names and categories from the catalog; every series service must be listed.
void apply_catalog(TrafficSeries& series, const std::vector<ServiceInfo>& catalog);

/// Fraction of bins in which the antenna's total volume is positive.
std::vector<double> activity_fractions(const TrafficSeries& series);
/// Keeps antennas active in at least `threshold` of the bins.
TrafficSeries filter_active_antennas(const TrafficSeries& series, double threshold = 0.9);

struct NormalizationStats {
  std::vector<double> mean;    // per service
  std::vector<double> stddev;  // per service, floored at kStdFloor
  static constexpr double kStdFloor = 1e-8;
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

/// Population mean and standard deviation per service over all bins and antennas.
NormalizationStats compute_stats(const TrafficSeries& series);
/// z-score along axis `service_axis` of `x`.
Tensor normalize(const Tensor& x, const NormalizationStats& stats, std::size_t service_axis = 1);
Tensor denormalize(const Tensor& x, const NormalizationStats& stats, std::size_t service_axis = 1);

}  // namespace mtf
