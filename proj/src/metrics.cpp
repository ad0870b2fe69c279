#include "mtf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "mtf/error.hpp"

namespace mtf {

namespace {

struct Dims {
  std::size_t n, k, s, cells;
};

Dims dims_of(const Tensor& pred, const Tensor& truth, std::span<const double> mask, const char* who) {
  require_same_shape(pred, truth, who);
  if (pred.rank() < 4) {
    throw DimensionError(fmt::format("{}: expected [N, K, S, cells...], got {}", who, to_string(pred.shape())));
  }
  Dims d{pred.dim(0), pred.dim(1), pred.dim(2), 1};
  for (std::size_t i = 3; i < pred.rank(); ++i) d.cells *= pred.dim(i);
  if (!mask.empty() && mask.size() != d.cells) {
    throw DimensionError(fmt::format("{}: mask has {} entries for {} cells", who, mask.size(), d.cells));
  }
  return d;
}

bool live(std::span<const double> mask, std::size_t cell) { return mask.empty() || mask[cell] != 0.0; }

std::size_t live_count(std::span<const double> mask, std::size_t cells) {
  if (mask.empty()) return cells;
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](double m) { return m != 0.0; }));
}

}  // namespace

MaeResult mae(const Tensor& pred, const Tensor& truth, std::span<const double> mask) {
  const Dims d = dims_of(pred, truth, mask, "mae");
  const std::size_t live_cells = live_count(mask, d.cells);
  if (live_cells == 0) throw ContractError("mae: every cell is masked");
  MaeResult r;
  r.per_step.assign(d.k, 0.0);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t k = 0; k < d.k; ++k) {
      for (std::size_t s = 0; s < d.s; ++s) {
        const std::size_t base = ((n * d.k + k) * d.s + s) * d.cells;
        for (std::size_t c = 0; c < d.cells; ++c) {
          if (live(mask, c)) r.per_step[k] += std::abs(pred[base + c] - truth[base + c]);
        }
      }
    }
  }
  const double count = static_cast<double>(d.n * d.s * live_cells);
  for (double& v : r.per_step) v /= count;
  r.aggregate = std::accumulate(r.per_step.begin(), r.per_step.end(), 0.0) / static_cast<double>(d.k);
  return r;
}

double psnr_from_mse(double mse, double d_max) {
  if (!(d_max > 0.0)) throw ContractError("psnr: d_max must be positive");
  return 20.0 * std::log10(d_max) - 10.0 * std::log10(std::max(mse, 1e-12));
}

double psnr(const Tensor& pred, const Tensor& truth, double d_max, std::span<const double> mask) {
  const Dims d = dims_of(pred, truth, mask, "psnr");
  if (!(d_max > 0.0)) throw ContractError("psnr: d_max must be positive");
  const std::size_t live_cells = live_count(mask, d.cells);
  if (live_cells == 0) throw ContractError("psnr: every cell is masked");
  double total = 0.0;
  for (std::size_t nk = 0; nk < d.n * d.k; ++nk) {
    double se = 0.0;
    for (std::size_t s = 0; s < d.s; ++s) {
      const std::size_t base = (nk * d.s + s) * d.cells;
      for (std::size_t c = 0; c < d.cells; ++c) {
        if (!live(mask, c)) continue;
        const double e = pred[base + c] - truth[base + c];
        se += e * e;
      }
    }
    total += psnr_from_mse(se / static_cast<double>(d.s * live_cells), d_max);
  }
  return total / static_cast<double>(d.n * d.k);
}

double ssim(std::span<const double> pred, std::span<const double> truth, std::span<const double> mask) {
  if (pred.size() != truth.size()) throw DimensionError("ssim: snapshots differ in size");
  if (!mask.empty() && mask.size() != pred.size()) throw DimensionError("ssim: mask size mismatch");
  const std::size_t m = live_count(mask, pred.size());
  if (m < 2) throw ContractError("ssim: needs at least two unmasked cells");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!live(mask, i)) continue;
    mx += pred[i];
    my += truth[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!live(mask, i)) continue;
    const double dx = pred[i] - mx, dy = truth[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= static_cast<double>(m);
  vy /= static_cast<double>(m);
  cxy /= static_cast<double>(m);
  constexpr double c1 = (kSsimK1 * kSsimRange) * (kSsimK1 * kSsimRange);
  constexpr double c2 = (kSsimK2 * kSsimRange) * (kSsimK2 * kSsimRange);
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim_mean(const Tensor& pred, const Tensor& truth, std::span<const double> d_max_per_service,
                 std::span<const double> mask) {
  const Dims d = dims_of(pred, truth, mask, "ssim");
  if (d_max_per_service.size() != d.s) throw DimensionError("ssim: one d_max per service required");
  std::vector<double> x(d.cells), y(d.cells);
  double total = 0.0;
  for (std::size_t nk = 0; nk < d.n * d.k; ++nk) {
    for (std::size_t s = 0; s < d.s; ++s) {
      // An all-zero service keeps unit scale so its snapshots still compare.
      const double scale = d_max_per_service[s] > 0.0 ? 2.0 / d_max_per_service[s] : 1.0;
      const std::size_t base = (nk * d.s + s) * d.cells;
      for (std::size_t c = 0; c < d.cells; ++c) {
        x[c] = pred[base + c] * scale - 1.0;
        y[c] = truth[base + c] * scale - 1.0;
      }
      total += ssim(x, y, mask);
    }
  }
  return total / static_cast<double>(d.n * d.k * d.s);
}

namespace {

// NMAE with every term excluded is reported as NaN when `strict` is off.
NmaeResult nmae_impl(const Tensor& pred, const Tensor& truth, std::span<const double> mask, bool strict) {
  const Dims d = dims_of(pred, truth, mask, "nmae");
  NmaeResult r;
  r.values.assign(d.s, 0.0);
  r.excluded.assign(d.s, 0);
  r.terms.assign(d.s, 0);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t s = 0; s < d.s; ++s) {
      for (std::size_t c = 0; c < d.cells; ++c) {
        if (!live(mask, c)) continue;
        auto at = [&](const Tensor& t, std::size_t k) { return t[((n * d.k + k) * d.s + s) * d.cells + c]; };
        double lo = at(truth, 0), hi = lo;
        for (std::size_t k = 1; k < d.k; ++k) {
          lo = std::min(lo, at(truth, k));
          hi = std::max(hi, at(truth, k));
        }
        const double span = hi - lo;
        if (span < kSpanFloor) {
          ++r.excluded[s];
          continue;
        }
        for (std::size_t k = 0; k < d.k; ++k) r.values[s] += std::abs(at(pred, k) - at(truth, k)) / span;
        r.terms[s] += d.k;
      }
    }
  }
  for (std::size_t s = 0; s < d.s; ++s) {
    if (r.terms[s] == 0) {
      if (strict) throw ContractError(fmt::format("nmae: every term of series {} has zero span over the horizon", s));
      r.values[s] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r.values[s] /= static_cast<double>(r.terms[s]);
  }
  return r;
}

double mean_defined(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

}  // namespace

static CategoryNmae nmae_category_impl(const Tensor& pred, const Tensor& truth,
                                       const std::vector<ServiceInfo>& services, std::span<const double> mask,
                                       bool strict);

NmaeResult nmae_per_service(const Tensor& pred, const Tensor& truth, std::span<const double> mask) {
  return nmae_impl(pred, truth, mask, true);
}

CategoryNmae nmae_per_category(const Tensor& pred, const Tensor& truth, const std::vector<ServiceInfo>& services,
                               std::span<const double> mask) {
  return nmae_category_impl(pred, truth, services, mask, true);
}

static CategoryNmae nmae_category_impl(const Tensor& pred, const Tensor& truth,
                                       const std::vector<ServiceInfo>& services, std::span<const double> mask,
                                       bool strict) {
  const Dims d = dims_of(pred, truth, mask, "nmae_per_category");
  if (services.size() != d.s) throw DimensionError("nmae_per_category: one catalog entry per service required");
  std::vector<std::size_t> group(d.s);
  CategoryNmae out;
  for (std::string_view name : kServiceCategories) {
    bool present = false;
    for (std::size_t s = 0; s < d.s; ++s) {
      if (services[s].category == name) {
        group[s] = out.categories.size();
        present = true;
      }
    }
    if (present) out.categories.emplace_back(name);
  }
  for (const ServiceInfo& s : services) {
    if (!is_known_category(s.category)) throw ContractError("unknown category " + s.category);
  }
  const std::size_t G = out.categories.size();
  Shape shape{d.n, d.k, G, d.cells};
  Tensor p(shape), t(shape);
  for (std::size_t nk = 0; nk < d.n * d.k; ++nk) {
    for (std::size_t s = 0; s < d.s; ++s) {
      const std::size_t src = (nk * d.s + s) * d.cells, dst = (nk * G + group[s]) * d.cells;
      for (std::size_t c = 0; c < d.cells; ++c) {
        p[dst + c] += pred[src + c];
        t[dst + c] += truth[src + c];
      }
    }
  }
  out.result = nmae_impl(p, t, mask, strict);
  return out;
}

std::vector<double> max_per_service(const Tensor& truth, std::span<const double> mask) {
  const Dims d = dims_of(truth, truth, mask, "max_per_service");
  std::vector<double> out(d.s, -std::numeric_limits<double>::infinity());
  for (std::size_t nk = 0; nk < d.n * d.k; ++nk) {
    for (std::size_t s = 0; s < d.s; ++s) {
      const std::size_t base = (nk * d.s + s) * d.cells;
      for (std::size_t c = 0; c < d.cells; ++c) {
        if (live(mask, c)) out[s] = std::max(out[s], truth[base + c]);
      }
    }
  }
  return out;
}

double max_value(const Tensor& truth, std::span<const double> mask) {
  const auto per = max_per_service(truth, mask);
  return *std::max_element(per.begin(), per.end());
}

double EvalReport::mean_nmae_service() const { return mean_defined(nmae_service); }

double EvalReport::mean_nmae_category() const { return mean_defined(nmae_category); }

EvalReport compute_report(const Tensor& pred, const Tensor& truth, const std::vector<ServiceInfo>& services,
                          std::span<const double> mask) {
  const Dims d = dims_of(pred, truth, mask, "evaluate");
  if (d.n == 0) throw ContractError("evaluate: no windows");
  EvalReport r;
  r.windows = d.n;
  const MaeResult m = mae(pred, truth, mask);
  r.mae_per_step = m.per_step;
  r.mae = m.aggregate;
  r.d_max = max_value(truth, mask);
  r.psnr = psnr(pred, truth, r.d_max, mask);
  r.ssim = ssim_mean(pred, truth, max_per_service(truth, mask), mask);
  // Degenerate services (constant over every horizon) are reported as NaN rather than aborting the report.
  const NmaeResult ns = nmae_impl(pred, truth, mask, false);
  for (const ServiceInfo& s : services) r.service_ids.push_back(s.id);
  r.nmae_service = ns.values;
  r.nmae_service_excluded = ns.excluded;
  const CategoryNmae nc = nmae_category_impl(pred, truth, services, mask, false);
  r.categories = nc.categories;
  r.nmae_category = nc.result.values;
  r.nmae_category_excluded = nc.result.excluded;
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  auto line = [&out](const std::string& s) { out += s + '\n'; };
  line(fmt::format("model: {}", r.model));
  line(fmt::format("config hash: {}", r.config_hash));
  line(fmt::format("data hash: {}", r.data_hash));
  line(fmt::format("seed: {}", r.seed));
  line(fmt::format("test windows: {}", r.windows));
  line(fmt::format("MAE: {:.3f} bytes per bin ({:.3f} bytes/s)", r.mae, r.mae / static_cast<double>(kBinSeconds)));
  line(fmt::format("PSNR: {:.4f} dB (d_max {:.0f})", r.psnr, r.d_max));
  line(fmt::format("SSIM: {:.6f}", r.ssim));
  line("MAE by step:");
  for (std::size_t k = 0; k < r.mae_per_step.size(); ++k) {
    line(fmt::format("  t+{:<3} {:.3f}", k + 1, r.mae_per_step[k]));
  }
  line(fmt::format("NMAE by service (mean {:.6f}):", r.mean_nmae_service()));
  for (std::size_t s = 0; s < r.nmae_service.size(); ++s) {
    line(fmt::format("  {:<16} {:.6f} ({} zero-span terms excluded)", r.service_ids[s], r.nmae_service[s],
                     r.nmae_service_excluded[s]));
  }
  line(fmt::format("NMAE by category (mean {:.6f}):", r.mean_nmae_category()));
  for (std::size_t c = 0; c < r.nmae_category.size(); ++c) {
    line(fmt::format("  {:<16} {:.6f} ({} zero-span terms excluded)", r.categories[c], r.nmae_category[c],
                     r.nmae_category_excluded[c]));
  }
  return out;
}

std::string metrics_csv(const EvalReport& r) {
  std::string out = "metric,scope,step,value\n";
  auto row = [&out](std::string_view metric, std::string_view scope, std::string step, double value) {
    out += fmt::format("{},{},{},{}\n", metric, scope, step, value);
  };
  row("mae", "all", "", r.mae);
  row("mae_bytes_per_s", "all", "", r.mae / static_cast<double>(kBinSeconds));
  for (std::size_t k = 0; k < r.mae_per_step.size(); ++k) row("mae", "all", std::to_string(k + 1), r.mae_per_step[k]);
  row("psnr", "all", "", r.psnr);
  row("ssim", "all", "", r.ssim);
  for (std::size_t s = 0; s < r.nmae_service.size(); ++s) {
    row("nmae", "service:" + r.service_ids[s], "", r.nmae_service[s]);
  }
  row("nmae_mean", "service", "", r.mean_nmae_service());
  for (std::size_t c = 0; c < r.nmae_category.size(); ++c) {
    row("nmae", "category:" + r.categories[c], "", r.nmae_category[c]);
  }
  row("nmae_mean", "category", "", r.mean_nmae_category());
  return out;
}

}  // namespace mtf
