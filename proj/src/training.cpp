#include "mtf/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/random.hpp"

namespace mtf {

void adam_step(ModelParams& params, const ParamGradients& grads, AdamState& state) {
  const AdamConfig& hp = state.config;
  for (const ModelParams::Entry& e : params.entries()) {
    if (!e.trainable) continue;
    const auto it = grads.find(e.name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for " + e.name);
    if (it->second.shape() != e.value.shape()) {
      throw ContractError(fmt::format("adam_step: gradient of {} has shape {}, parameter {}", e.name,
                                      to_string(it->second.shape()), to_string(e.value.shape())));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (ModelParams::Entry& e : params.entries()) {
    if (!e.trainable) continue;
    const Tensor& g = grads.at(e.name);
    Tensor& m = state.m.try_emplace(e.name, e.value.shape()).first->second;
    Tensor& v = state.v.try_emplace(e.name, e.value.shape()).first->second;
    const double* gp = g.data().data();
    double* mp = m.data().data();
    double* vp = v.data().data();
    double* pp = e.value.data().data();
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) {
      mp[i] = hp.beta1 * mp[i] + (1.0 - hp.beta1) * gp[i];
      vp[i] = hp.beta2 * vp[i] + (1.0 - hp.beta2) * gp[i] * gp[i];
      const double m_hat = mp[i] / c1, v_hat = vp[i] / c2;
      pp[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || threads == 0) {
    throw ContractError("epochs, batch size and threads must be positive");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("learning rate must be finite and nonnegative");
  if (tf_prob && !(*tf_prob >= 0.0 && *tf_prob <= 1.0)) throw ContractError("tf_prob must lie in [0, 1]");
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

Tensor loss_mask(const std::vector<double>& cell_mask, std::size_t horizon, std::size_t services) {
  const std::size_t cells = cell_mask.size();
  Tensor mask(Shape{horizon * services * cells});
  for (std::size_t ks = 0; ks < horizon * services; ++ks) {
    std::copy(cell_mask.begin(), cell_mask.end(), mask.data().begin() + static_cast<std::ptrdiff_t>(ks * cells));
  }
  return mask;
}

namespace {

Tensor shaped_mask(const Tensor& mask, const Shape& shape) {
  if (mask.shape() == shape) return mask;
  if (mask.size() != shape_size(shape)) {
    throw DimensionError("loss mask of " + to_string(mask.shape()) + " does not fit " + to_string(shape));
  }
  return mask.reshaped(shape);
}

}  // namespace

LossAndGradients loss_and_gradients(const ModelConfig& config, const ModelParams& params, const Tensor& input,
                                    const Tensor& target, const Tensor& mask, const std::vector<bool>& forcing) {
  Graph graph;
  BoundParams bound(graph, params);
  const NodeId target_node = graph.constant(target);
  const ForwardPass pass = build_forward(graph, config, bound, graph.constant(input), target_node, forcing);
  const NodeId loss = graph.masked_mse_loss(pass.output, target_node,
                                            graph.constant(shaped_mask(mask, graph.value(pass.output).shape())));
  LossAndGradients out;
  out.loss = graph.value(loss).item();
  if (graph.requires_grad(loss)) graph.backward(loss);
  out.gradients = bound.take_gradients(graph);
  for (const NormObservation& n : pass.norms) {
    std::vector<double> mean, var;
    channel_moments(graph.value(n.input), mean, var);
    out.norm_moments.emplace_back(n.prefix, std::make_pair(std::move(mean), std::move(var)));
  }
  return out;
}

double forecast_loss(const ModelConfig& config, const ModelParams& params, const Tensor& input, const Tensor& target,
                     const Tensor& mask) {
  const Tensor pred = forecast(config, params, input);
  const Tensor m = shaped_mask(mask, pred.shape());
  require_same_shape(pred, target, "forecast_loss");
  double se = 0.0, count = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    se += m[i] * e * e;
    count += m[i];
  }
  if (count <= 0.0) throw ContractError("forecast_loss: every cell is masked");
  return se / count;
}

double dataset_loss(const ModelConfig& config, const ModelParams& params, const WindowedDataset& data,
                    std::size_t threads) {
  if (data.empty()) throw ContractError("dataset_loss: no windows");
  const Tensor mask = loss_mask(data.cell_mask(), data.horizon(), data.services());
  std::vector<double> losses(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const ForecastWindow w = data.window(i);
    losses[i] = forecast_loss(config, params, w.input, w.target, mask);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

namespace {

double norm_momentum(const ModelConfig& config) {
  if (const auto* b = std::get_if<BaselineConfig>(&config.spec)) return b->norm_momentum;
  return 0.0;
}

// Folds per-sample channel moments of a batch into the running statistics.
void update_running_stats(ModelParams& params, const std::vector<LossAndGradients>& batch, double momentum) {
  if (batch.empty() || batch.front().norm_moments.empty()) return;
  const std::size_t layers = batch.front().norm_moments.size();
  const double n = static_cast<double>(batch.size());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string& prefix = batch.front().norm_moments[l].first;
    Tensor& running_mean = params.get(prefix + ".running_mean");
    Tensor& running_var = params.get(prefix + ".running_var");
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
      double mean = 0.0, second = 0.0;
      for (const LossAndGradients& s : batch) {
        const auto& [m, v] = s.norm_moments[l].second;
        mean += m[c];
        second += v[c] + m[c] * m[c];
      }
      mean /= n;
      const double var = std::max(second / n - mean * mean, 0.0);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
    }
  }
}

}  // namespace

TrainResult train(const ModelConfig& config, ModelParams initial, const WindowedDataset& train_data,
                  const WindowedDataset* validation, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  config.validate();
  if (!is_trainable(config.kind())) throw ContractError(to_string(config.kind()) + " has no trainable parameters");
  if (train_data.empty()) throw ContractError("train: no training windows");
  if (validation != nullptr && validation->empty()) validation = nullptr;
  if (train_data.input_length() != config.input_length() || train_data.horizon() != config.horizon() ||
      train_data.services() != config.services() || train_data.rows() != config.grid_rows() ||
      train_data.cols() != config.grid_cols()) {
    throw ContractError("train: dataset windows do not match the model configuration");
  }

  const double tf_prob = tc.tf_prob.value_or(config.teacher_forcing());
  const bool uses_forcing = config.is_sequential() && tf_prob > 0.0;
  const double momentum = norm_momentum(config);
  const Tensor mask = loss_mask(train_data.cell_mask(), train_data.horizon(), train_data.services());

  Rng shuffle_rng(tc.seed);
  Rng forcing_rng(tc.seed ^ 0x5deece66dULL);
  TrainResult result;
  result.adam.config.lr = tc.lr;
  result.last = std::move(initial);
  result.best = result.last;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0, steps = 0;
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      if (tc.max_steps != 0 && steps >= tc.max_steps) break;
      const std::size_t count = std::min(tc.batch_size, order.size() - begin);
      std::vector<std::vector<bool>> forcing(count);
      if (uses_forcing) {
        for (auto& f : forcing) f = draw_teacher_forcing(config.horizon(), tf_prob, forcing_rng);
      }
      std::vector<LossAndGradients> samples(count);
      const ModelParams& current = result.last;
      parallel_for(count, tc.threads, [&](std::size_t i) {
        const ForecastWindow w = train_data.window(order[begin + i]);
        samples[i] = loss_and_gradients(config, current, w.input, w.target, mask, forcing[i]);
      });
      // Ordered reduction keeps results independent of the worker count.
      ParamGradients mean_grad = std::move(samples[0].gradients);
      for (std::size_t i = 1; i < count; ++i) {
        for (auto& [name, g] : mean_grad) {
          const Tensor& other = samples[i].gradients.at(name);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += other[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [name, g] : mean_grad) {
        for (double& x : g.data()) x *= inv;
      }
      double batch_loss = 0.0;
      for (const LossAndGradients& s : samples) batch_loss += s.loss;
      if (!std::isfinite(batch_loss)) {
        throw NumericalError(fmt::format("training loss became non-finite at epoch {}, step {}", epoch, steps + 1));
      }
      for (const auto& [name, g] : mean_grad) {
        if (!g.all_finite()) {
          throw NumericalError(fmt::format("gradient of {} became non-finite at epoch {}, step {}", name, epoch,
                                           steps + 1));
        }
      }
      adam_step(result.last, mean_grad, result.adam);
      update_running_stats(result.last, samples, momentum);
      loss_sum += batch_loss;
      seen += count;
      ++steps;
    }
    if (seen == 0) break;
    EpochRecord record;
    record.epoch = epoch;
    record.steps = steps;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.validation_loss = validation != nullptr ? dataset_loss(config, result.last, *validation, tc.threads)
                                                   : std::numeric_limits<double>::quiet_NaN();
    if (validation != nullptr && !std::isfinite(record.validation_loss)) {
      throw NumericalError(fmt::format("validation loss became non-finite at epoch {}", epoch));
    }
    const double score = validation != nullptr ? record.validation_loss : record.train_loss;
    const bool improved = score < best_loss;
    if (improved) {
      best_loss = score;
      result.best = result.last;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record, result.best, improved);
    if (tc.patience != 0 && stale >= tc.patience) break;
    if (tc.max_steps != 0 && steps >= tc.max_steps) break;
  }
  return result;
}

Tensor forecast_all(const ModelConfig& config, const ModelParams& params, const WindowedDataset& data,
                    std::size_t threads) {
  if (data.empty()) throw ContractError("forecast_all: no windows");
  const std::size_t per = config.horizon() * config.services() * config.grid_rows() * config.grid_cols();
  Tensor out(Shape{data.size(), config.horizon(), config.services(), config.grid_rows(), config.grid_cols()});
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const Tensor pred = forecast(config, params, data.window(i).input);
    if (!pred.all_finite()) throw NumericalError(fmt::format("forecast of window {} is not finite", i));
    std::copy(pred.data().begin(), pred.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  });
  return out;
}

EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const WindowedDataset& test,
                    const NormalizationStats& stats, const std::vector<ServiceInfo>& services,
                    std::size_t threads) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  Tensor pred = denormalize(forecast_all(config, params, test, threads), stats, 2);
  for (double& v : pred.data()) v = std::max(v, 0.0);
  const std::size_t per = test.horizon() * test.services() * test.rows() * test.cols();
  Tensor truth(pred.shape());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Tensor t = test.window(i).target;
    std::copy(t.data().begin(), t.data().end(), truth.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  truth = denormalize(truth, stats, 2);
  EvalReport report = compute_report(pred, truth, services, test.cell_mask());
  report.model = to_string(config.kind());
  report.seed = config.seed();
  return report;
}

}  // namespace mtf
