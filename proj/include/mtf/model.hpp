#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mtf/autodiff.hpp"
#include "mtf/baselines.hpp"
#include "mtf/convlstm.hpp"
#include "mtf/params.hpp"
#include "mtf/tensor.hpp"

namespace mtf {

/// Any forecaster: the ConvLSTM encoder-decoder or one of the baselines.
struct ModelConfig {
  std::variant<S2SConfig, BaselineConfig> spec;

  ModelKind kind() const;
  std::size_t input_length() const;
  std::size_t horizon() const;
  std::size_t services() const;
  std::size_t grid_rows() const;
  std::size_t grid_cols() const;
  double teacher_forcing() const;
  std::uint64_t seed() const;
  /// True for decoders that consume teacher-forcing coins.
  bool is_sequential() const;
  void validate() const;

  /// Copies the data-dependent shape fields onto the config.
  void set_shape(std::size_t services, std::size_t rows, std::size_t cols, std::size_t input_length,
                 std::size_t horizon);
  void set_seed(std::uint64_t seed);
};

/// Desk-scale defaults for `kind` (ConvLSTM: 32 embed channels, 2x32 layers).
ModelConfig default_model_config(ModelKind kind);
/// Reference-scale sizes where defined; the ConvLSTM keeps its desk size.
ModelConfig full_scale_model_config(ModelKind kind);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
/// FNV-1a of the canonical JSON text.
std::uint64_t config_hash(const ModelConfig& config);

ModelParams init_params(const ModelConfig& config);

struct ForwardPass {
  NodeId output;  // [K,S,H,W]
  std::vector<NormObservation> norms;
};

/// Builds the forward graph. `target` and `forcing` only matter for the
/// sequential models during training.
ForwardPass build_forward(Graph& graph, const ModelConfig& config, const BoundParams& params, NodeId input,
                          std::optional<NodeId> target = std::nullopt, const std::vector<bool>& forcing = {});

/// Forecast in normalized units: [T_in,S,H,W] -> [K,S,H,W].
Tensor forecast(const ModelConfig& config, const ModelParams& params, const Tensor& input);

}  // namespace mtf
