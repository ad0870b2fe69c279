#include "mtf/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mtf/checkpoint.hpp"
#include "mtf/error.hpp"
#include "mtf/grid_mapping.hpp"
#include "mtf/hash.hpp"
#include "mtf/metrics.hpp"
#include "mtf/model.hpp"
#include "mtf/pipeline.hpp"
#include "mtf/synthetic.hpp"
#include "mtf/timeutil.hpp"
#include "mtf/traffic.hpp"
#include "mtf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mtf::cli {

namespace {

/// Bad flag values detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env != nullptr && *env != '\0' ? std::string(env) : std::string(".");
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& text, const char* flag) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const std::string rows = text.substr(0, x), cols = text.substr(x + 1);
    const unsigned long r = std::stoul(rows, &used);
    if (used != rows.size()) throw std::invalid_argument(text);
    const unsigned long c = std::stoul(cols, &used);
    if (used != cols.size() || r == 0 || c == 0) throw std::invalid_argument(text);
    return {r, c};
  } catch (const std::exception&) {
    throw UsageError(fmt::format("{} expects ROWSxCOLS with positive sizes, got '{}'", flag, text));
  }
}

std::vector<std::size_t> parse_list(const std::string& text, const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("{} expects comma-separated positive integers, got '{}'", flag, text));
    }
  }
  if (out.empty()) throw UsageError(fmt::format("{} must not be empty", flag));
  return out;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------- data flags

struct DataFlags {
  std::string data;
  std::string catalog;
  std::string mapping;
  PipelineConfig pipeline;

  void add(CLI::App* cmd, bool windows) {
    cmd->add_option("--data", data, "Traffic CSV")->required();
    cmd->add_option("--catalog", catalog, "Service catalog CSV");
    cmd->add_option("--mapping", mapping, "Grid mapping file (computed on the fly when omitted)")
        ;
    cmd->add_option("--activity", pipeline.activity_threshold, "Minimum active fraction of an antenna")
        ->capture_default_str()
        ->check(CLI::Range(1e-9, 1.0));
    if (!windows) return;
    cmd->add_option("--input-length", pipeline.input_length, "Input snapshots per window")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--horizon", pipeline.horizon, "Forecast steps per window")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--train-frac", pipeline.train_frac, "Chronological training fraction")
        ->capture_default_str()
        ->check(CLI::Range(1e-9, 1.0 - 1e-9));
    cmd->add_option("--val-frac", pipeline.validation_frac, "Validation tail of the training portion")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 0.99));
    cmd->add_option("--train-stride", pipeline.train_stride, "Window stride for training and validation")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--eval-stride", pipeline.eval_stride, "Window stride for test windows")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  }
};

struct LoadedData {
  TrafficSeries series;  // filtered, catalog applied
  AntennaGrid grid;
  std::string data_hash;
};

std::string input_hash(const DataFlags& flags) {
  Fnv1a h;
  h.update(hex64(hash_file(flags.data)));
  h.update(flags.catalog.empty() ? std::string("no-catalog") : hex64(hash_file(flags.catalog)));
  h.update(flags.mapping.empty() ? std::string("auto-mapping") : hex64(hash_file(flags.mapping)));
  h.update(fmt_double(flags.pipeline.activity_threshold));
  return hex64(h.digest());
}

LoadedData load_data(const DataFlags& flags) {
  LoadedData out;
  out.data_hash = input_hash(flags);
  TrafficSeries raw = ingest_csv(flags.data);
  if (!flags.catalog.empty()) apply_catalog(raw, read_catalog(flags.catalog));
  out.series = filter_active_antennas(raw, flags.pipeline.activity_threshold);
  if (flags.mapping.empty()) {
    const auto [rows, cols] = choose_grid_dims(out.series.antennas);
    out.grid = map_antennas_to_grid(out.series.antennas, rows, cols);
  } else {
    out.grid = read_mapping(flags.mapping);
  }
  return out;
}

json pipeline_json(const PipelineConfig& p) {
  return json{{"input_length", p.input_length},     {"horizon", p.horizon},
              {"train_frac", p.train_frac},         {"validation_frac", p.validation_frac},
              {"train_stride", p.train_stride},     {"eval_stride", p.eval_stride},
              {"activity_threshold", p.activity_threshold}};
}

std::vector<std::string> provenance(const std::string& command, std::uint64_t seed, const std::string& hash) {
  return {fmt::format("mtf {}", command), fmt::format("seed={}", seed), fmt::format("input_hash={}", hash)};
}

std::string comment_block(const std::vector<std::string>& lines) {
  std::string out;
  for (const std::string& l : lines) out += "# " + l + "\n";
  return out;
}

// ------------------------------------------------------------------ generate

struct GenerateFlags {
  std::string out = default_output_dir();
  std::string grid = "6x6";
  SyntheticConfig config;
  std::optional<double> top_share;
};

void cmd_generate(const GenerateFlags& f) {
  SyntheticConfig config = f.config;
  std::tie(config.grid_rows, config.grid_cols) = parse_dims(f.grid, "--grid");
  if (f.top_share) {
    try {
      config.alpha = alpha_for_top_share(config.services, *f.top_share);
    } catch (const ContractError& e) {
      throw UsageError(std::string("--top-share: ") + e.what());
    }
  }
  config.validate();
  const fs::path dir = ensure_dir(f.out);
  const json cfg = to_json(config);
  const std::string hash = hex64(fnv1a(cfg.dump()));
  const auto preamble = provenance("generate", config.seed, hash);
  const TrafficSeries series = synthesize_traffic(config);
  write_csv(series, (dir / "traffic.csv").string(), preamble);
  write_catalog(series.services, (dir / "catalog.csv").string(), preamble);
  json manifest{{"command", "generate"},
                {"seed", config.seed},
                {"input_hash", hash},
                {"config", cfg},
                {"files", {{"traffic", "traffic.csv"}, {"catalog", "catalog.csv"}}},
                {"bins", series.length()},
                {"antennas", series.antenna_count()},
                {"services", series.service_count()},
                {"start", format_iso8601(series.start_epoch)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << fmt::format("wrote {} bins x {} services x {} antennas to {}\n", series.length(),
                           series.service_count(), series.antenna_count(), dir.string());
}

// ------------------------------------------------------------------ map-grid

struct MapGridFlags {
  std::string data;
  std::string out;
  std::string grid;
  double activity = 0.9;
};

void cmd_map_grid(const MapGridFlags& f) {
  const std::string hash = hex64(hash_file(f.data));
  const TrafficSeries series = filter_active_antennas(ingest_csv(f.data), f.activity);
  std::size_t rows = 0, cols = 0;
  if (f.grid.empty()) {
    std::tie(rows, cols) = choose_grid_dims(series.antennas);
  } else {
    std::tie(rows, cols) = parse_dims(f.grid, "--grid");
  }
  const AntennaGrid grid = map_antennas_to_grid(series.antennas, rows, cols);
  const fs::path out = f.out.empty() ? ensure_dir(default_output_dir()) / "mapping.csv" : fs::path(f.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  auto preamble = provenance("map-grid", 0, hash);
  preamble.push_back(fmt::format("activity_threshold={}", f.activity));
  write_mapping(grid, out.string(), preamble);
  std::cout << fmt::format("mapped {} antennas onto {}x{} ({} masked cells), mean displacement {:.2f} m -> {}\n",
                           grid.antenna_count(), rows, cols, grid.masked_count(), grid.mean_displacement(),
                           out.string());
}

// --------------------------------------------------------------------- train

struct ModelFlags {
  std::string model = "convlstm";
  std::string preset = "desk";
  std::string hidden;
  std::optional<std::size_t> embed, depth, width, kernel;
  double tf_prob = 0.5;

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "convlstm, mlp, cnn, cnn3d, lstm")->capture_default_str();
    cmd->add_option("--preset", preset, "desk or full")->capture_default_str()->check(
        CLI::IsMember({"desk", "full"}));
    cmd->add_option("--hidden", hidden, "ConvLSTM hidden channels per layer, e.g. 32,32");
    cmd->add_option("--embed", embed, "ConvLSTM embedding channels or LSTM embedding units")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--depth", depth, "Baseline depth")->check(CLI::PositiveNumber);
    cmd->add_option("--width", width, "Baseline width")->check(CLI::PositiveNumber);
    cmd->add_option("--kernel", kernel, "Convolution kernel size (odd)")->check(CLI::PositiveNumber);
    cmd->add_option("--tf-prob", tf_prob, "Teacher-forcing probability")->capture_default_str()->check(
        CLI::Range(0.0, 1.0));
  }

  ModelConfig build(const PipelineConfig& p, const TrafficSeries& series, const AntennaGrid& grid,
                    std::uint64_t seed) const {
    ModelKind kind;
    try {
      kind = parse_model_kind(model);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    if (!is_trainable(kind)) throw UsageError(model + " has no trainable parameters and cannot be trained");
    ModelConfig config = preset == "full" ? full_scale_model_config(kind) : default_model_config(kind);
    config.set_shape(series.service_count(), grid.rows(), grid.cols(), p.input_length, p.horizon);
    config.set_seed(seed);
    if (auto* s = std::get_if<S2SConfig>(&config.spec)) {
      if (!hidden.empty()) s->hidden_channels = parse_list(hidden, "--hidden");
      if (embed) s->embed_channels = *embed;
      if (kernel) s->kernel_size = *kernel;
      s->teacher_forcing = tf_prob;
    } else {
      auto& b = std::get<BaselineConfig>(config.spec);
      if (depth) b.depth = *depth;
      if (width) b.width = *width;
      if (kernel) b.kernel_size = *kernel;
      if (embed) b.embed_units = *embed;
      b.teacher_forcing = tf_prob;
    }
    try {
      config.validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    return config;
  }
};

struct TrainFlags {
  DataFlags data;
  ModelFlags model;
  TrainConfig train;
  std::string out = default_output_dir();
  bool quiet = false;
};

struct TrainOutputs {
  fs::path checkpoint;
  EvalReport validation_report;
};

std::string loss_csv(const std::vector<EpochRecord>& history, const std::vector<std::string>& preamble) {
  std::string out = comment_block(preamble) + "epoch,steps,train_loss,validation_loss\n";
  for (const EpochRecord& r : history) {
    out += fmt::format("{},{},{},{}\n", r.epoch, r.steps, fmt_double(r.train_loss),
                       std::isnan(r.validation_loss) ? std::string() : fmt_double(r.validation_loss));
  }
  return out;
}

fs::path run_training(const TrainFlags& f, const LoadedData& loaded) {
  const PreparedData prepared = prepare_data(loaded.series, loaded.grid, f.data.pipeline);
  const ModelConfig config = f.model.build(f.data.pipeline, loaded.series, loaded.grid, f.train.seed);
  const fs::path dir = ensure_dir(f.out);
  const std::string name = to_string(config.kind());
  const fs::path ckpt_path = dir / (name + ".ckpt");

  json metadata{{"data_hash", loaded.data_hash},
                {"seed", f.train.seed},
                {"pipeline", pipeline_json(f.data.pipeline)},
                {"grid", {{"rows", loaded.grid.rows()}, {"cols", loaded.grid.cols()}}},
                {"services", json::array()},
                {"train", {{"epochs", f.train.epochs},
                           {"batch_size", f.train.batch_size},
                           {"lr", f.train.lr},
                           {"patience", f.train.patience},
                           {"max_steps", f.train.max_steps}}}};
  for (const ServiceInfo& s : loaded.series.services) metadata["services"].push_back(s.id);

  TrainConfig tc = f.train;
  tc.tf_prob = config.teacher_forcing();
  const auto on_epoch = [&](const EpochRecord& r, const ModelParams& best, bool improved) {
    if (!f.quiet) {
      std::cerr << fmt::format("[{}] epoch {:>3}  train {:.6f}  validation {:.6f}{}\n", name, r.epoch,
                               r.train_loss, r.validation_loss, improved ? "  *" : "");
    }
    if (improved) save_checkpoint(Checkpoint{config, best, prepared.stats, metadata, std::nullopt}, ckpt_path.string());
  };
  const TrainResult result = train(config, init_params(config), prepared.train,
                                   prepared.validation.empty() ? nullptr : &prepared.validation, tc, on_epoch);
  metadata["best_epoch"] = result.best_epoch;
  save_checkpoint(Checkpoint{config, result.best, prepared.stats, metadata, result.adam}, ckpt_path.string());

  const auto preamble = provenance("train --model " + name, f.train.seed, loaded.data_hash);
  write_text(dir / (name + "_loss.csv"), loss_csv(result.history, preamble));
  json snapshot{{"model", to_json(config)},
                {"config_hash", hex64(config_hash(config))},
                {"metadata", metadata}};
  write_text(dir / (name + "_config.json"), snapshot.dump(2) + "\n");
  if (!f.quiet) std::cout << fmt::format("best epoch {} -> {}\n", result.best_epoch, ckpt_path.string());
  return ckpt_path;
}

void cmd_train(const TrainFlags& f) { run_training(f, load_data(f.data)); }

// ------------------------------------------------------------------ evaluate

struct ModelSource {
  ModelConfig config;
  ModelParams params;
  std::optional<NormalizationStats> stats;
  std::string label;
  std::string checkpoint_hash;
};

ModelSource persistence_source(const PipelineConfig& p, const TrafficSeries& series, const AntennaGrid& grid) {
  BaselineConfig b;
  b.kind = ModelKind::Persistence;
  ModelConfig config{b};
  config.set_shape(series.service_count(), grid.rows(), grid.cols(), p.input_length, p.horizon);
  config.set_seed(0);
  return ModelSource{config, ModelParams{}, std::nullopt, "persistence", "none"};
}

// Loads a checkpoint and aligns the pipeline settings with the ones it was trained on.
ModelSource checkpoint_source(const std::string& path, const std::string& data_hash, PipelineConfig& pipeline) {
  Checkpoint ck = load_checkpoint(path);
  const std::string stored = ck.metadata.value("data_hash", std::string());
  if (stored != data_hash) {
    throw ContractError(fmt::format("checkpoint {} was trained on data {} but the inputs hash to {}", path, stored,
                                    data_hash));
  }
  if (ck.metadata.contains("pipeline")) {
    const json& p = ck.metadata["pipeline"];
    pipeline.train_frac = p.value("train_frac", pipeline.train_frac);
    pipeline.validation_frac = p.value("validation_frac", pipeline.validation_frac);
  }
  pipeline.input_length = ck.model.input_length();
  pipeline.horizon = ck.model.horizon();
  return ModelSource{ck.model, std::move(ck.params), ck.stats, to_string(ck.model.kind()), hex64(hash_file(path))};
}

EvalReport evaluate_source(const ModelSource& source, const LoadedData& loaded, const PipelineConfig& pipeline,
                           std::size_t threads) {
  const PreparedData prepared = prepare_data(loaded.series, loaded.grid, pipeline);
  if (source.stats && *source.stats != prepared.stats) {
    throw ContractError("normalization statistics of the checkpoint differ from those of the data");
  }
  if (source.config.services() != loaded.series.service_count() || source.config.grid_rows() != loaded.grid.rows() ||
      source.config.grid_cols() != loaded.grid.cols()) {
    throw ContractError("model shape does not match the data and grid");
  }
  EvalReport report = evaluate(source.config, source.params, prepared.test, prepared.stats,
                               loaded.series.services, threads);
  report.config_hash = hex64(config_hash(source.config));
  report.data_hash = loaded.data_hash;
  return report;
}

void write_report_files(const EvalReport& r, const std::vector<ServiceInfo>& services, const fs::path& dir,
                        const std::string& prefix) {
  const std::string head = comment_block(provenance("evaluate --model " + r.model, r.seed, r.data_hash));
  write_text(dir / (prefix + "_report.txt"), format_report(r));
  write_text(dir / (prefix + "_metrics.csv"), head + metrics_csv(r));
  std::string steps = head + "step,mae,mae_bytes_per_s\n";
  for (std::size_t k = 0; k < r.mae_per_step.size(); ++k) {
    steps += fmt::format("{},{},{}\n", k + 1, fmt_double(r.mae_per_step[k]),
                         fmt_double(r.mae_per_step[k] / static_cast<double>(kBinSeconds)));
  }
  write_text(dir / (prefix + "_mae_by_step.csv"), steps);
  std::string by_service = head + "service_id,service_name,category,nmae,excluded\n";
  for (std::size_t s = 0; s < r.nmae_service.size(); ++s) {
    by_service += fmt::format("{},{},{},{},{}\n", services[s].id, services[s].name, services[s].category,
                              fmt_double(r.nmae_service[s]), r.nmae_service_excluded[s]);
  }
  write_text(dir / (prefix + "_nmae_by_service.csv"), by_service);
  std::string by_category = head + "category,nmae,excluded\n";
  for (std::size_t c = 0; c < r.nmae_category.size(); ++c) {
    by_category += fmt::format("{},{},{}\n", r.categories[c], fmt_double(r.nmae_category[c]),
                               r.nmae_category_excluded[c]);
  }
  write_text(dir / (prefix + "_nmae_by_category.csv"), by_category);
}

struct EvaluateFlags {
  DataFlags data;
  std::string checkpoint;
  std::string model;
  std::string out = default_output_dir();
  std::size_t threads = default_threads();
};

void cmd_evaluate(EvaluateFlags f) {
  if (f.checkpoint.empty() == f.model.empty()) throw UsageError("give exactly one of --checkpoint or --model");
  if (!f.model.empty() && f.model != "persistence") {
    throw UsageError("--model only accepts persistence; trained models are evaluated from --checkpoint");
  }
  const LoadedData loaded = load_data(f.data);
  const ModelSource source = f.checkpoint.empty()
                                 ? persistence_source(f.data.pipeline, loaded.series, loaded.grid)
                                 : checkpoint_source(f.checkpoint, loaded.data_hash, f.data.pipeline);
  const EvalReport r = evaluate_source(source, loaded, f.data.pipeline, f.threads);
  const fs::path dir = ensure_dir(f.out);
  write_report_files(r, loaded.series.services, dir, source.label);
  std::cout << format_report(r);
}

// ------------------------------------------------------------------- compare

struct CompareFlags {
  DataFlags data;
  std::vector<std::string> checkpoints;
  bool persistence = false;
  std::string out = default_output_dir();
  std::size_t threads = default_threads();
};

struct CompareRow {
  std::string model;
  EvalReport report;
};

std::string comparison_table(const std::vector<CompareRow>& rows, const std::vector<std::string>& preamble) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].report.mae < rows[best].report.mae) best = i;
  }
  std::string out = comment_block(preamble) + "model,MAE,PSNR,SSIM,best\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const EvalReport& r = rows[i].report;
    out += fmt::format("{},{},{},{},{}\n", rows[i].model, fmt_double(r.mae), fmt_double(r.psnr), fmt_double(r.ssim),
                       i == best ? "*" : "");
  }
  return out;
}

std::string compare_models(const CompareFlags& f, const LoadedData& loaded) {
  if (f.checkpoints.size() + (f.persistence ? 1 : 0) < 2) {
    throw UsageError("compare needs at least two models (checkpoints and/or --persistence)");
  }
  std::vector<CompareRow> rows;
  PipelineConfig pipeline = f.data.pipeline;
  std::optional<PipelineConfig> reference;
  for (const std::string& path : f.checkpoints) {
    PipelineConfig p = f.data.pipeline;
    const ModelSource source = checkpoint_source(path, loaded.data_hash, p);
    if (reference && (reference->train_frac != p.train_frac || reference->input_length != p.input_length ||
                      reference->horizon != p.horizon)) {
      throw ContractError("checkpoints were trained with different split or window settings");
    }
    reference = p;
    rows.push_back(CompareRow{source.label, evaluate_source(source, loaded, p, f.threads)});
  }
  if (reference) pipeline = *reference;
  if (f.persistence) {
    rows.push_back(CompareRow{"persistence", evaluate_source(persistence_source(pipeline, loaded.series, loaded.grid),
                                                             loaded, pipeline, f.threads)});
  }
  return comparison_table(rows, provenance("compare", 0, loaded.data_hash));
}

void cmd_compare(const CompareFlags& f) {
  const LoadedData loaded = load_data(f.data);
  const std::string table = compare_models(f, loaded);
  const fs::path dir = ensure_dir(f.out);
  write_text(dir / "comparison.csv", table);
  std::cout << table;
}

// ------------------------------------------------------------------- predict

struct PredictFlags {
  DataFlags data;
  std::string checkpoint;
  std::string model;
  std::string out;
  std::optional<std::size_t> end_bin;
};

void cmd_predict(PredictFlags f) {
  if (f.checkpoint.empty() == f.model.empty()) throw UsageError("give exactly one of --checkpoint or --model");
  if (!f.model.empty() && f.model != "persistence") throw UsageError("--model only accepts persistence");
  const LoadedData loaded = load_data(f.data);
  ModelSource source = f.checkpoint.empty() ? persistence_source(f.data.pipeline, loaded.series, loaded.grid)
                                            : checkpoint_source(f.checkpoint, loaded.data_hash, f.data.pipeline);
  const TrafficSeries& series = loaded.series;
  const std::size_t t_in = source.config.input_length(), horizon = source.config.horizon();
  const std::size_t end = f.end_bin.value_or(series.length());
  if (end > series.length() || end < t_in) {
    throw ContractError(fmt::format("need {} bins of history before bin {}, the series has {}", t_in, end,
                                    series.length()));
  }
  NormalizationStats stats;
  if (source.stats) {
    stats = *source.stats;
  } else {
    const std::size_t train_bins =
        static_cast<std::size_t>(std::llround(f.data.pipeline.train_frac * static_cast<double>(series.length())));
    stats = compute_stats(series.slice(0, std::max<std::size_t>(train_bins, 1)));
  }
  const TrafficSeries history = series.slice(end - t_in, t_in);
  const Tensor input = scatter_to_grid(normalize(history.volumes, stats, 1), series.antennas, loaded.grid);
  Tensor pred = denormalize(forecast(source.config, source.params, input), stats, 1);
  for (double& v : pred.data()) v = std::max(v, 0.0);
  const Tensor volumes = gather_from_grid(pred, series.antennas, loaded.grid);  // [K, S, A]

  std::string out = comment_block(provenance("predict --model " + source.label, source.config.seed(),
                                             loaded.data_hash));
  out += comment_block({fmt::format("checkpoint_hash={}", source.checkpoint_hash),
                        fmt::format("history_end={}", format_iso8601(series.timestamp(end - 1)))});
  out += "timestamp,antenna_id,service_id,volume\n";
  const std::size_t S = series.service_count(), A = series.antenna_count();
  for (std::size_t k = 0; k < horizon; ++k) {
    const std::string stamp = format_iso8601(series.timestamp(end - 1) + static_cast<std::int64_t>(k + 1) *
                                                                               series.step_seconds);
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t s = 0; s < S; ++s) {
        out += fmt::format("{},{},{},{}\n", stamp, series.antennas[a].id, series.services[s].id,
                           fmt_double(volumes[(k * S + s) * A + a]));
      }
    }
  }
  const fs::path path = f.out.empty() ? ensure_dir(default_output_dir()) / "forecast.csv" : fs::path(f.out);
  if (path.has_parent_path()) ensure_dir(path.parent_path().string());
  write_text(path, out);
  std::cout << fmt::format("wrote {} forecast rows to {}\n", horizon * S * A, path.string());
}

// -------------------------------------------------------------- run-pipeline

struct PipelineFlags {
  GenerateFlags generate;
  TrainConfig train;
  PipelineConfig pipeline;
  std::string models = "convlstm,mlp,cnn,cnn3d,lstm";
  std::string preset = "desk";
  bool quiet = false;
};

void cmd_run_pipeline(PipelineFlags f) {
  cmd_generate(f.generate);
  const fs::path dir = fs::path(f.generate.out);
  MapGridFlags map{(dir / "traffic.csv").string(), (dir / "mapping.csv").string(), "", f.pipeline.activity_threshold};
  cmd_map_grid(map);

  DataFlags data;
  data.data = map.data;
  data.catalog = (dir / "catalog.csv").string();
  data.mapping = map.out;
  data.pipeline = f.pipeline;
  const LoadedData loaded = load_data(data);

  CompareFlags compare;
  compare.data = data;
  compare.persistence = true;
  compare.out = f.generate.out;
  compare.threads = f.train.threads;
  std::stringstream ss(f.models);
  std::string name;
  while (std::getline(ss, name, ',')) {
    TrainFlags t;
    t.data = data;
    t.model.model = name;
    t.model.preset = f.preset;
    t.train = f.train;
    t.out = f.generate.out;
    t.quiet = f.quiet;
    const fs::path ckpt = run_training(t, loaded);
    compare.checkpoints.push_back(ckpt.string());
    PipelineConfig p = data.pipeline;
    const ModelSource source = checkpoint_source(ckpt.string(), loaded.data_hash, p);
    write_report_files(evaluate_source(source, loaded, p, f.train.threads), loaded.series.services, dir, name);
  }
  const EvalReport persistence =
      evaluate_source(persistence_source(data.pipeline, loaded.series, loaded.grid), loaded, data.pipeline,
                      f.train.threads);
  write_report_files(persistence, loaded.series.services, dir, "persistence");
  const std::string table = compare_models(compare, loaded);
  write_text(dir / "comparison.csv", table);
  std::cout << table;
}

// -------------------------------------------------------------------- parser

void add_generate_options(CLI::App* cmd, GenerateFlags& g) {
  SyntheticConfig& c = g.config;
  cmd->add_option("--out", g.out, "Output directory (default $" + std::string(kOutputDirEnv) + " or .)");
  cmd->add_option("--services", c.services, "Number of services")->capture_default_str()->check(
      CLI::PositiveNumber);
  cmd->add_option("--days", c.days, "Duration in days")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--grid", g.grid, "Antenna lattice ROWSxCOLS")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--noise", c.noise, "Log-noise scale")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--alpha", c.alpha, "Power-law exponent of service shares")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  cmd->add_option("--top-share", g.top_share, "Share of the top service (overrides --alpha)");
  cmd->add_option("--sporadic", c.sporadic, "Sporadically active antennas")->capture_default_str();
  cmd->add_option("--hotspots", c.hotspots, "Spatial hotspots")->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainConfig& t, bool with_seed = true) {
  cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", t.batch_size, "Windows per optimizer step")->capture_default_str()->check(
      CLI::PositiveNumber);
  cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  if (with_seed) {
    cmd->add_option("--seed", t.seed, "Seed for initialization, shuffling and teacher forcing")
        ->capture_default_str();
  }
  cmd->add_option("--patience", t.patience, "Early-stopping patience in epochs (0 = off)")->capture_default_str();
  cmd->add_option("--max-steps", t.max_steps, "Stop after this many optimizer steps (0 = no limit)")
      ->capture_default_str();
  cmd->add_option("--threads", t.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Multi-service mobile traffic forecasting", "mtf"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic traffic dataset, catalog and manifest");
  add_generate_options(generate, gen);

  MapGridFlags map;
  auto* map_grid = app.add_subcommand("map-grid", "Assign antennas to grid cells");
  map_grid->add_option("--data", map.data, "Traffic CSV")->required();
  map_grid->add_option("--out", map.out, "Mapping file (default <output dir>/mapping.csv)");
  map_grid->add_option("--grid", map.grid, "ROWSxCOLS (chosen automatically when omitted)");
  map_grid->add_option("--activity", map.activity, "Minimum active fraction of an antenna")
      ->capture_default_str()
      ->check(CLI::Range(1e-9, 1.0));

  TrainFlags tr;
  tr.train.threads = default_threads();
  auto* train_cmd = app.add_subcommand("train", "Train a model and write its checkpoint and loss history");
  tr.data.add(train_cmd, true);
  tr.model.add(train_cmd);
  add_train_options(train_cmd, tr.train);
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvaluateFlags ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute test-set metrics for a checkpoint or persistence");
  ev.data.add(evaluate_cmd, true);
  evaluate_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  evaluate_cmd->add_option("--model", ev.model, "persistence");
  evaluate_cmd->add_option("--out", ev.out, "Output directory");
  evaluate_cmd->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);

  CompareFlags cmp;
  auto* compare = app.add_subcommand("compare", "Tabulate MAE, PSNR and SSIM of several models");
  cmp.data.add(compare, true);
  compare->add_option("--checkpoint", cmp.checkpoints, "Checkpoint file (repeatable)");
  compare->add_flag("--persistence", cmp.persistence, "Include the persistence forecaster");
  compare->add_option("--out", cmp.out, "Output directory");
  compare->add_option("--threads", cmp.threads, "Worker threads")->check(CLI::PositiveNumber);

  PredictFlags pr;
  auto* predict = app.add_subcommand("predict", "Forecast the K bins after the end of the data");
  pr.data.add(predict, false);
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint file");
  predict->add_option("--model", pr.model, "persistence");
  predict->add_option("--input-length", pr.data.pipeline.input_length, "Input snapshots (persistence only)")
      ->check(CLI::PositiveNumber);
  predict->add_option("--horizon", pr.data.pipeline.horizon, "Forecast steps (persistence only)")
      ->check(CLI::PositiveNumber);
  predict->add_option("--end-bin", pr.end_bin, "Forecast after this many bins of history (default: all)");
  predict->add_option("--out", pr.out, "Forecast CSV (default <output dir>/forecast.csv)");

  PipelineFlags pl;
  pl.train.threads = default_threads();
  auto* pipeline = app.add_subcommand(
      "run-pipeline", "generate, map-grid, train every model, evaluate and compare in one output directory");
  add_generate_options(pipeline, pl.generate);
  add_train_options(pipeline->add_option_group("training"), pl.train, false);
  pipeline->add_option("--models", pl.models, "Comma-separated trainable models")->capture_default_str();
  pipeline->add_option("--preset", pl.preset, "desk or full")->capture_default_str()->check(
      CLI::IsMember({"desk", "full"}));
  pipeline->add_option("--train-stride", pl.pipeline.train_stride, "Training window stride")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  pipeline->add_option("--eval-stride", pl.pipeline.eval_stride, "Test window stride")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  pipeline->add_flag("--quiet", pl.quiet, "No per-epoch progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsageError;
  }

  if (generate->parsed()) cmd_generate(gen);
  if (map_grid->parsed()) cmd_map_grid(map);
  if (train_cmd->parsed()) cmd_train(tr);
  if (evaluate_cmd->parsed()) cmd_evaluate(ev);
  if (compare->parsed()) cmd_compare(cmp);
  if (predict->parsed()) cmd_predict(pr);
  if (pipeline->parsed()) {
    // The seed flag is shared: it seeds the generator; training derives from it.
    pl.train.seed = pl.generate.config.seed;
    cmd_run_pipeline(pl);
  }
  return kSuccess;
}

}  // namespace

int run(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const GapError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"mtf"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace mtf::cli
