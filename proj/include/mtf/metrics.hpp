#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtf/tensor.hpp"
#include "mtf/traffic.hpp"

namespace mtf {

// Metric inputs are [N, K, S, cells...] tensors of volumes (N windows, K
// steps, S services); trailing axes are flattened into cells. `mask` has one
// entry per cell (nonzero = evaluated) and may be empty to evaluate all cells.

struct MaeResult {
  std::vector<double> per_step;
  double aggregate = 0.0;
};

MaeResult mae(const Tensor& pred, const Tensor& truth, std::span<const double> mask = {});

/// 20 log10(d_max) - 10 log10(max(mse, 1e-12)).
double psnr_from_mse(double mse, double d_max);
/// PSNR of every (window, step) snapshot, averaged.
double psnr(const Tensor& pred, const Tensor& truth, double d_max, std::span<const double> mask = {});

inline constexpr double kSsimK1 = 0.1;
inline constexpr double kSsimK2 = 0.3;
inline constexpr double kSsimRange = 2.0;

/// Standard SSIM of two equally long value vectors using population
/// statistics over the cells where `mask` is nonzero.
double ssim(std::span<const double> pred, std::span<const double> truth, std::span<const double> mask = {});
/// Mean SSIM over windows, steps and services. Each service's volumes are
/// mapped onto [-1, 1] by v / d_max[s] * 2 - 1 before comparison.
double ssim_mean(const Tensor& pred, const Tensor& truth, std::span<const double> d_max_per_service,
                 std::span<const double> mask = {});

inline constexpr double kSpanFloor = 1e-9;

struct NmaeResult {
  std::vector<double> values;          // per service (or category)
  std::vector<std::size_t> excluded;   // (window, cell) pairs with span below kSpanFloor
  std::vector<std::size_t> terms;      // (window, step, cell) terms averaged
};

/// Mean over windows, steps and cells of |pred - truth| / span, where span is
/// the truth range over the window's K steps at that cell.
NmaeResult nmae_per_service(const Tensor& pred, const Tensor& truth, std::span<const double> mask = {});

struct CategoryNmae {
  std::vector<std::string> categories;  // in canonical category order, present ones only
  NmaeResult result;
};

/// Sums services of each category, then applies nmae_per_service.
CategoryNmae nmae_per_category(const Tensor& pred, const Tensor& truth, const std::vector<ServiceInfo>& services,
                               std::span<const double> mask = {});

/// Largest truth value per service over unmasked cells.
std::vector<double> max_per_service(const Tensor& truth, std::span<const double> mask = {});
double max_value(const Tensor& truth, std::span<const double> mask = {});

struct EvalReport {
  std::string model;
  std::string config_hash;
  std::string data_hash;
  std::uint64_t seed = 0;
  std::size_t windows = 0;
  double d_max = 0.0;
  std::vector<double> mae_per_step;
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<std::string> service_ids;
  std::vector<double> nmae_service;
  std::vector<std::size_t> nmae_service_excluded;
  std::vector<std::string> categories;
  std::vector<double> nmae_category;
  std::vector<std::size_t> nmae_category_excluded;

  double mean_nmae_service() const;
  double mean_nmae_category() const;
};

/// All metrics for denormalized [N, K, S, H, W] predictions and truths.
EvalReport compute_report(const Tensor& pred, const Tensor& truth, const std::vector<ServiceInfo>& services,
                          std::span<const double> mask = {});

std::string format_report(const EvalReport& report);
/// `metric,scope,step,value` rows.
std::string metrics_csv(const EvalReport& report);

}  // namespace mtf
