#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtf/autodiff.hpp"
#include "mtf/params.hpp"
#include "mtf/random.hpp"
#include "mtf/tensor.hpp"

namespace mtf {

/// Sequence-to-sequence ConvLSTM configuration.
struct S2SConfig {
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  std::size_t services = 8;
  std::size_t embed_channels = 32;
  std::vector<std::size_t> hidden_channels{32, 32};
  std::size_t kernel_size = 3;
  std::size_t input_length = 12;
  std::size_t horizon = 12;
  double teacher_forcing = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Weights of one peephole ConvLSTM cell. Kernels are [hidden, in, k, k]
/// (input side) or [hidden, hidden, k, k] (hidden side); peepholes are
/// [hidden, rows, cols]; biases are [hidden].
struct ConvLSTMCellParams {
  Tensor w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho;
  Tensor w_ci, w_cf, w_co;
  Tensor b_i, b_f, b_c, b_o;

  std::size_t hidden_channels() const { return b_i.dim(0); }
  void validate() const;
  /// Reads the entries `<prefix>.w_xi` ... `<prefix>.b_o`.
  static ConvLSTMCellParams from(const ModelParams& params, const std::string& prefix);
};

struct CellState {
  Tensor h;
  Tensor c;

  static CellState zeros(std::size_t channels, std::size_t rows, std::size_t cols);
};

/// One step of the cell with its gate activations, for inspection.
struct CellStepResult {
  CellState state;
  Tensor input_gate, forget_gate, output_gate;
};

CellState cell_step(const ConvLSTMCellParams& params, const Tensor& input, const CellState& state);
CellStepResult cell_step_with_gates(const ConvLSTMCellParams& params, const Tensor& input,
                                    const CellState& state);

/// Which linear map a recurrent stack uses: 2-D convolutions over [C,H,W]
/// snapshots, or dense products over [N,1] column vectors.
enum class Connectivity { Convolutional, Dense };

/// Graph handles for a cell. The four gate transforms are fused along the
/// output axis in the order i, f, c, o.
struct CellNodes {
  NodeId w_x, w_h, bias;
  NodeId w_ci, w_cf, w_co;
  std::size_t hidden = 0;
};

struct CellStateNodes {
  NodeId h, c;
};

struct CellStepNodes {
  CellStateNodes state;
  NodeId input_gate, forget_gate, output_gate;
};

/// Fuses the per-gate tensors bound under `prefix` into CellNodes.
CellNodes bind_cell(Graph& graph, const BoundParams& params, const std::string& prefix);

CellStepNodes cell_step(Graph& graph, Connectivity connectivity, const CellNodes& cell, NodeId input,
                        const CellStateNodes& state);

/// Graph handles for a whole encoder-decoder.
struct S2SNodes {
  Connectivity connectivity = Connectivity::Convolutional;
  NodeId enc_embed_w, enc_embed_b;
  NodeId dec_embed_w, dec_embed_b;
  NodeId out_w, out_b;
  std::vector<CellNodes> encoder, decoder;
  /// Zero state per layer: [hidden, rows, cols] or [hidden, 1].
  std::vector<Shape> state_shapes;
};

/// Binds an encoder-decoder whose entries are named `<prefix>enc.embed.w`,
/// `<prefix>enc.cell<l>.*`, `<prefix>dec.embed.w`, `<prefix>dec.cell<l>.*`,
/// `<prefix>out.w` and so on.
S2SNodes bind_recurrent(Graph& graph, const BoundParams& params, const std::string& prefix,
                        Connectivity connectivity, std::vector<Shape> state_shapes);

/// Binds the parameters written by init_params(S2SConfig).
S2SNodes bind_s2s(Graph& graph, const BoundParams& params, const S2SConfig& config);

/// Runs the embedding and stacked layers over `inputs`; returns the final
/// (H, C) of every layer. States start at zero.
std::vector<CellStateNodes> encode(Graph& graph, const S2SNodes& model, std::span<const NodeId> inputs);

/// Rolls the decoder out for `horizon` steps. Step 0 consumes `first_input`.
/// Step k >= 1 consumes `targets[k-1]` when `forcing[k-1]` is set, otherwise
/// the step k-1 prediction. `forcing` may be empty (no teacher forcing).
std::vector<NodeId> decode(Graph& graph, const S2SNodes& model, std::vector<CellStateNodes> states,
                           NodeId first_input, std::size_t horizon, std::span<const NodeId> targets,
                           const std::vector<bool>& forcing);

/// Draws horizon-1 teacher-forcing coins with success probability `tf_prob`.
std::vector<bool> draw_teacher_forcing(std::size_t horizon, double tf_prob, Rng& rng);

// Value-level entry points over ModelParams created by init_params.

std::vector<CellState> encode(const S2SConfig& config, const ModelParams& params, std::span<const Tensor> inputs);

/// `targets` are the ground-truth snapshots t+1..t+K; required when tf_prob > 0,
/// in which case `rng` draws the coins.
std::vector<Tensor> decode(const S2SConfig& config, const ModelParams& params,
                           const std::vector<CellState>& init_states, const Tensor& first_input,
                           std::size_t horizon, const std::vector<Tensor>* targets = nullptr,
                           double tf_prob = 0.0, Rng* rng = nullptr);

/// Encode then decode without teacher forcing. `input` is [T_in,S,H,W];
/// returns [K,S,H,W] in normalized units.
Tensor forecast(const S2SConfig& config, const ModelParams& params, const Tensor& input);

/// Glorot-uniform kernels, zero peepholes and biases, forget bias 1.
ModelParams init_params(const S2SConfig& config);

/// Adds the cell entries `<prefix>.w_xi` ... `<prefix>.b_o`. `state_inner` is
/// the trailing shape of peepholes: {rows, cols} or {1}; `kernel_inner` is the
/// trailing kernel shape: {k, k} or {} (dense).
void add_cell_params(ModelParams& params, Rng& rng, const std::string& prefix, std::size_t in,
                     std::size_t hidden, const Shape& kernel_inner, const Shape& state_inner);

/// Glorot-uniform tensor with bound sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out);

/// Splits a [T, ...] tensor into T graph constants of shape [...].
std::vector<NodeId> unstack_constant(Graph& graph, const Tensor& sequence);
/// Splits a [T, ...] graph node into T nodes of shape [...].
std::vector<NodeId> unstack(Graph& graph, NodeId sequence);
/// Stacks equally shaped nodes into [T, ...].
NodeId stack(Graph& graph, std::span<const NodeId> items);

}  // namespace mtf
