#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtf/traffic.hpp"

namespace mtf {

/// City-scale synthetic traffic. Antennas sit on a jittered lattice plus a few
/// sporadic sites; each service's volume is its power-law share times a
/// hotspot map modulated by a daily sinusoid, times lognormal noise made of a
/// slowly drifting AR(1) part and an independent per-bin part.
struct SyntheticConfig {
  std::size_t services = 8;
  /// One category per service; empty selects a fixed streaming-heavy mix.
  std::vector<std::string> categories;
  double alpha = 1.2;  // share of rank r is proportional to r^-alpha
  std::size_t days = 28;
  std::int64_t start_epoch = 1704067200;  // 2024-01-01T00:00:00Z
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  double spacing_m = 400.0;
  double jitter = 0.2;  // lattice jitter as a fraction of the spacing
  std::size_t sporadic = 2;
  double sporadic_activity = 0.5;  // probability a sporadic site carries traffic in a bin
  std::size_t hotspots = 3;
  double hotspot_width = 0.3;  // Gaussian sigma as a fraction of the lattice extent
  double background = 0.3;     // hotspot-free intensity floor
  double diurnal_amplitude = 0.6;
  double phase_jitter = 0.6;  // per-service daily phase offset range, radians
  double noise = 0.25;        // sigma of the per-bin log-noise
  double drift_ratio = 1.0;   // sigma of the AR(1) log-drift relative to `noise`
  double drift_correlation = 0.97;
  double mean_volume = 2e7;  // bytes per antenna per bin, summed over services
  double center_lon = 9.19;
  double center_lat = 45.46;
  std::uint64_t seed = 7;

  std::size_t bins() const { return days * 288; }
  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& config);

/// Normalized shares rank^-alpha / sum_r r^-alpha.
std::vector<double> service_shares(std::size_t services, double alpha);
/// Exponent that gives the top-ranked service the requested share.
double alpha_for_top_share(std::size_t services, double top_share);
/// Default category of the service at 0-based rank `rank`.
std::string default_category(std::size_t rank);

TrafficSeries synthesize_traffic(const SyntheticConfig& config);

}  // namespace mtf
