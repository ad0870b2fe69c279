#include "mtf/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/random.hpp"

namespace mtf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kEarthRadius = 6371008.8;
constexpr std::size_t kBinsPerDay = 288;

}  // namespace

void SyntheticConfig::validate() const {
  if (services == 0) throw ContractError("synthetic: at least one service required");
  if (!categories.empty() && categories.size() != services) {
    throw ContractError("synthetic: one category per service required");
  }
  for (const std::string& c : categories) {
    if (!is_known_category(c)) throw ContractError("synthetic: unknown category " + c);
  }
  if (days == 0) throw ContractError("synthetic: duration must be at least one day");
  if (grid_rows == 0 || grid_cols == 0) throw ContractError("synthetic: lattice dimensions must be positive");
  if (!(alpha >= 0.0) || !(spacing_m > 0.0) || !(jitter >= 0.0 && jitter < 1.0) ||
      !(hotspot_width > 0.0) || !(background >= 0.0) || !(diurnal_amplitude >= 0.0 && diurnal_amplitude < 1.0) ||
      !(phase_jitter >= 0.0) || !(noise >= 0.0) || !(drift_ratio >= 0.0) ||
      !(drift_correlation >= 0.0 && drift_correlation < 1.0) || !(mean_volume > 0.0) ||
      !(sporadic_activity >= 0.0 && sporadic_activity <= 1.0)) {
    throw ContractError("synthetic: parameter out of range");
  }
  if (hotspots == 0 && background <= 0.0) throw ContractError("synthetic: no hotspots and no background");
  if (start_epoch % kBinSeconds != 0) throw ContractError("synthetic: start must lie on a 5-minute boundary");
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return nlohmann::json{{"services", c.services},
                        {"categories", c.categories},
                        {"alpha", c.alpha},
                        {"days", c.days},
                        {"start_epoch", c.start_epoch},
                        {"grid_rows", c.grid_rows},
                        {"grid_cols", c.grid_cols},
                        {"spacing_m", c.spacing_m},
                        {"jitter", c.jitter},
                        {"sporadic", c.sporadic},
                        {"sporadic_activity", c.sporadic_activity},
                        {"hotspots", c.hotspots},
                        {"hotspot_width", c.hotspot_width},
                        {"background", c.background},
                        {"diurnal_amplitude", c.diurnal_amplitude},
                        {"phase_jitter", c.phase_jitter},
                        {"noise", c.noise},
                        {"drift_ratio", c.drift_ratio},
                        {"drift_correlation", c.drift_correlation},
                        {"mean_volume", c.mean_volume},
                        {"center_lon", c.center_lon},
                        {"center_lat", c.center_lat},
                        {"seed", c.seed}};
}

std::vector<double> service_shares(std::size_t services, double alpha) {
  std::vector<double> shares(services);
  double total = 0.0;
  for (std::size_t r = 0; r < services; ++r) {
    shares[r] = std::pow(static_cast<double>(r + 1), -alpha);
    total += shares[r];
  }
  for (double& s : shares) s /= total;
  return shares;
}

double alpha_for_top_share(std::size_t services, double top_share) {
  if (services < 2) throw ContractError("alpha_for_top_share: need at least two services");
  const double lo_share = 1.0 / static_cast<double>(services);
  if (!(top_share > lo_share && top_share < 1.0)) {
    throw ContractError(fmt::format("top share must lie in ({}, 1)", lo_share));
  }
  double lo = 0.0, hi = 1.0;
  while (service_shares(services, hi)[0] < top_share) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi);
    (service_shares(services, mid)[0] < top_share ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::string default_category(std::size_t rank) {
  static const std::array<const char*, 9> mix{"streaming", "web",       "streaming", "social media", "cloud",
                                              "chat",      "streaming", "gaming",    "miscellaneous"};
  return mix[rank % mix.size()];
}

TrafficSeries synthesize_traffic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t S = cfg.services;
  const std::size_t lattice = cfg.grid_rows * cfg.grid_cols;
  const std::size_t A = lattice + cfg.sporadic;
  const std::size_t T = cfg.bins();

  TrafficSeries series;
  series.start_epoch = cfg.start_epoch;
  for (std::size_t s = 0; s < S; ++s) {
    const std::string category = cfg.categories.empty() ? default_category(s) : cfg.categories[s];
    series.services.push_back(ServiceInfo{fmt::format("svc{:02d}", s + 1), fmt::format("{}-{}", category, s + 1),
                                          category});
  }

  // Site positions in meters around the centre, then rounded lon/lat as
  // written to CSV and re-projected, so a CSV round trip is exact.
  const double half_w = 0.5 * static_cast<double>(cfg.grid_cols - 1) * cfg.spacing_m;
  const double half_h = 0.5 * static_cast<double>(cfg.grid_rows - 1) * cfg.spacing_m;
  std::vector<Point> pos;
  for (std::size_t r = 0; r < cfg.grid_rows; ++r) {
    for (std::size_t c = 0; c < cfg.grid_cols; ++c) {
      const double jx = cfg.jitter * cfg.spacing_m * rng.uniform(-0.5, 0.5);
      const double jy = cfg.jitter * cfg.spacing_m * rng.uniform(-0.5, 0.5);
      pos.push_back(Point{static_cast<double>(c) * cfg.spacing_m - half_w + jx,
                          half_h - static_cast<double>(r) * cfg.spacing_m + jy});
      series.antennas.push_back(AntennaSite{fmt::format("A{:03d}", r * cfg.grid_cols + c)});
    }
  }
  for (std::size_t i = 0; i < cfg.sporadic; ++i) {
    pos.push_back(Point{rng.uniform(-half_w, half_w), rng.uniform(-half_h, half_h)});
    series.antennas.push_back(AntennaSite{fmt::format("S{:03d}", i)});
  }
  const double deg = std::numbers::pi / 180.0;
  for (std::size_t a = 0; a < A; ++a) {
    const double lon = cfg.center_lon + pos[a].x / (kEarthRadius * std::cos(cfg.center_lat * deg)) / deg;
    const double lat = cfg.center_lat + pos[a].y / kEarthRadius / deg;
    series.antennas[a].lon = std::round(lon * 1e6) / 1e6;
    series.antennas[a].lat = std::round(lat * 1e6) / 1e6;
  }
  project_local(series.antennas);

  // Hotspots: centre, width, daily phase offset; per-service weights.
  const double extent = std::max(2.0 * std::max(half_w, half_h), cfg.spacing_m);
  const double sigma = cfg.hotspot_width * extent;
  std::vector<Point> centre(cfg.hotspots);
  std::vector<double> hotspot_phase(cfg.hotspots);
  for (std::size_t h = 0; h < cfg.hotspots; ++h) {
    centre[h] = Point{rng.uniform(-half_w, half_w), rng.uniform(-half_h, half_h)};
    hotspot_phase[h] = rng.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
  }
  std::vector<double> weight(S * cfg.hotspots), service_phase(S);
  for (std::size_t s = 0; s < S; ++s) {
    service_phase[s] = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter);
    for (std::size_t h = 0; h < cfg.hotspots; ++h) weight[s * cfg.hotspots + h] = rng.uniform(0.5, 1.5);
  }
  std::vector<double> kernel(cfg.hotspots * A);
  for (std::size_t h = 0; h < cfg.hotspots; ++h) {
    for (std::size_t a = 0; a < A; ++a) {
      const double dx = pos[a].x - centre[h].x, dy = pos[a].y - centre[h].y;
      kernel[h * A + a] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  // Scale each service so its time-averaged intensity over antennas is share * mean_volume.
  const std::vector<double> shares = service_shares(S, cfg.alpha);
  std::vector<double> scale(S);
  for (std::size_t s = 0; s < S; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      total += cfg.background;
      for (std::size_t h = 0; h < cfg.hotspots; ++h) total += weight[s * cfg.hotspots + h] * kernel[h * A + a];
    }
    scale[s] = shares[s] * cfg.mean_volume * static_cast<double>(A) / total;
  }

  const double drift_sigma = cfg.noise * cfg.drift_ratio;
  const double innovation = drift_sigma * std::sqrt(1.0 - cfg.drift_correlation * cfg.drift_correlation);
  std::vector<double> drift(S * A);
  for (double& d : drift) d = drift_sigma * rng.normal();
  const double noise_bias = -0.5 * (cfg.noise * cfg.noise + drift_sigma * drift_sigma);

  series.volumes = Tensor(Shape{T, S, A});
  std::vector<char> active(A, 1);
  for (std::size_t t = 0; t < T; ++t) {
    // Evening peak, trough in the early morning.
    const double theta = kTwoPi * static_cast<double>(t % kBinsPerDay) / kBinsPerDay - std::numbers::pi;
    for (std::size_t a = lattice; a < A; ++a) active[a] = rng.bernoulli(cfg.sporadic_activity) ? 1 : 0;
    for (std::size_t s = 0; s < S; ++s) {
      const double base_cycle = 1.0 + cfg.diurnal_amplitude * std::sin(theta + service_phase[s]);
      for (std::size_t a = 0; a < A; ++a) {
        double intensity = cfg.background * base_cycle;
        for (std::size_t h = 0; h < cfg.hotspots; ++h) {
          intensity += weight[s * cfg.hotspots + h] * kernel[h * A + a] *
                       (1.0 + cfg.diurnal_amplitude * std::sin(theta + service_phase[s] + hotspot_phase[h]));
        }
        double& d = drift[s * A + a];
        if (t > 0) d = cfg.drift_correlation * d + innovation * rng.normal();
        const double log_noise = cfg.noise > 0.0 ? d + cfg.noise * rng.normal() + noise_bias : 0.0;
        const double v = active[a] ? std::round(scale[s] * intensity * std::exp(log_noise)) : 0.0;
        series.volumes[(t * S + s) * A + a] = std::max(v, 0.0);
      }
    }
  }
  return series;
}

}  // namespace mtf
