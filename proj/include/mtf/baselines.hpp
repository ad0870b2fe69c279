#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mtf/autodiff.hpp"
#include "mtf/params.hpp"
#include "mtf/tensor.hpp"

namespace mtf {

enum class ModelKind { ConvLstm, Mlp, Cnn, Cnn3d, Lstm, Persistence };

std::string to_string(ModelKind kind);
/// Accepts "convlstm", "mlp", "cnn", "cnn3d", "lstm", "persistence".
ModelKind parse_model_kind(const std::string& name);
bool is_trainable(ModelKind kind);

enum class Activation { Tanh, Identity };

/// Configuration of the comparison models. `depth`/`width` mean hidden
/// layers/units for MLP, conv layers/channels for CNN and 3D CNN, and stacked
/// layers/hidden units for LSTM.
struct BaselineConfig {
  ModelKind kind = ModelKind::Mlp;
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t kernel_size = 3;
  /// Channels of the last conv layer feeding the fully-connected head
  /// (CNN / 3D CNN); 0 means `width`.
  std::size_t head_channels = 0;
  /// Dense embedding size of the LSTM encoder-decoder.
  std::size_t embed_units = 64;
  Activation activation = Activation::Tanh;
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  std::size_t services = 8;
  std::size_t input_length = 12;
  std::size_t horizon = 12;
  double teacher_forcing = 0.5;
  double norm_epsilon = 1e-5;
  double norm_momentum = 0.1;
  std::uint64_t seed = 1;

  std::size_t last_channels() const { return head_channels == 0 ? width : head_channels; }
  std::size_t snapshot_size() const { return services * grid_rows * grid_cols; }
  void validate() const;
};

/// Desk-scale defaults: MLP 4x64, CNN 4x32, 3D CNN 4x32 (head 4 channels), LSTM 2x64.
BaselineConfig desk_preset(ModelKind kind);
/// Reference-scale sizes: MLP 5x500, CNN/3D CNN 11x128, LSTM 500 units.
BaselineConfig full_scale_preset(ModelKind kind);

/// A standardization layer whose input statistics feed running averages.
struct NormObservation {
  std::string prefix;
  NodeId input;
};

ModelParams init_params(const BaselineConfig& config);

// Graph builders. `input` is [T_in,S,H,W]; each returns [K,S,H,W].

NodeId mlp_forward(Graph& graph, const BaselineConfig& config, const BoundParams& params, NodeId input);
NodeId cnn_forward(Graph& graph, const BaselineConfig& config, const BoundParams& params, NodeId input,
                   std::vector<NormObservation>* norms = nullptr);
NodeId cnn3d_forward(Graph& graph, const BaselineConfig& config, const BoundParams& params, NodeId input,
                     std::vector<NormObservation>* norms = nullptr);
/// `target` ([K,S,H,W]) and `forcing` follow the decode() rules of the ConvLSTM.
NodeId lstm_s2s_forward(Graph& graph, const BaselineConfig& config, const BoundParams& params, NodeId input,
                        std::optional<NodeId> target = std::nullopt, const std::vector<bool>& forcing = {});
NodeId persistence_forecast(Graph& graph, NodeId input, std::size_t horizon);

/// Repeats the last snapshot of `input` ([T_in,...]) `horizon` times.
Tensor persistence_forecast(const Tensor& input, std::size_t horizon);

/// Per-channel mean and population variance over all non-channel axes of a
/// [C, ...] tensor.
void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

}  // namespace mtf
