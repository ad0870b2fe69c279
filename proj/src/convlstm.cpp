#include "mtf/convlstm.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/ops.hpp"

namespace mtf {

void S2SConfig::validate() const {
  if (grid_rows == 0 || grid_cols == 0) throw ContractError("S2SConfig: grid dimensions must be positive");
  if (services == 0) throw ContractError("S2SConfig: at least one service required");
  if (embed_channels == 0) throw ContractError("S2SConfig: embed_channels must be positive");
  if (hidden_channels.empty()) throw ContractError("S2SConfig: at least one ConvLSTM layer required");
  for (std::size_t h : hidden_channels) {
    if (h == 0) throw ContractError("S2SConfig: hidden channel counts must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) throw ContractError("S2SConfig: kernel size must be odd");
  if (input_length < 1 || horizon < 1) throw ContractError("S2SConfig: input_length and horizon must be >= 1");
  if (!(teacher_forcing >= 0.0 && teacher_forcing <= 1.0)) {
    throw ContractError("S2SConfig: teacher_forcing must lie in [0,1]");
  }
}

void ConvLSTMCellParams::validate() const {
  const std::size_t hidden = b_i.rank() == 1 ? b_i.dim(0) : 0;
  if (hidden == 0) throw DimensionError("cell bias must be a vector");
  const std::size_t in = w_xi.rank() == 4 ? w_xi.dim(1) : 0;
  const std::size_t k = w_xi.rank() == 4 ? w_xi.dim(2) : 0;
  if (k == 0 || k % 2 == 0) throw DimensionError("cell kernels must be [hidden,in,k,k] with odd k");
  for (const Tensor* w : {&w_xi, &w_xf, &w_xc, &w_xo}) {
    if (w->shape() != Shape{hidden, in, k, k}) {
      throw DimensionError("input kernel shape " + to_string(w->shape()) + " inconsistent with " +
                           to_string(Shape{hidden, in, k, k}));
    }
  }
  for (const Tensor* w : {&w_hi, &w_hf, &w_hc, &w_ho}) {
    if (w->shape() != Shape{hidden, hidden, k, k}) {
      throw DimensionError("hidden kernel shape " + to_string(w->shape()) + " inconsistent with " +
                           to_string(Shape{hidden, hidden, k, k}));
    }
  }
  if (w_ci.rank() != 3 || w_ci.dim(0) != hidden || w_cf.shape() != w_ci.shape() ||
      w_co.shape() != w_ci.shape()) {
    throw DimensionError("peephole tensors must share shape [hidden,rows,cols]");
  }
  for (const Tensor* b : {&b_f, &b_c, &b_o}) {
    if (b->shape() != Shape{hidden}) throw DimensionError("cell biases must be [hidden]");
  }
}

ConvLSTMCellParams ConvLSTMCellParams::from(const ModelParams& params, const std::string& prefix) {
  auto get = [&](const char* name) { return params.get(prefix + "." + name); };
  ConvLSTMCellParams p{get("w_xi"), get("w_hi"), get("w_xf"), get("w_hf"), get("w_xc"),
                       get("w_hc"), get("w_xo"), get("w_ho"), get("w_ci"), get("w_cf"),
                       get("w_co"), get("b_i"),  get("b_f"),  get("b_c"),  get("b_o")};
  return p;
}

CellState CellState::zeros(std::size_t channels, std::size_t rows, std::size_t cols) {
  return CellState{Tensor(Shape{channels, rows, cols}), Tensor(Shape{channels, rows, cols})};
}

namespace {

NodeId fuse(Graph& graph, std::initializer_list<NodeId> parts) {
  const std::vector<NodeId> v(parts);
  return graph.concat(v);
}

CellNodes bind_cell_tensors(Graph& graph, const ConvLSTMCellParams& p) {
  CellNodes cell;
  auto c = [&](const Tensor& t) { return graph.constant(t); };
  cell.w_x = fuse(graph, {c(p.w_xi), c(p.w_xf), c(p.w_xc), c(p.w_xo)});
  cell.w_h = fuse(graph, {c(p.w_hi), c(p.w_hf), c(p.w_hc), c(p.w_ho)});
  cell.bias = fuse(graph, {c(p.b_i), c(p.b_f), c(p.b_c), c(p.b_o)});
  cell.w_ci = c(p.w_ci);
  cell.w_cf = c(p.w_cf);
  cell.w_co = c(p.w_co);
  cell.hidden = p.hidden_channels();
  return cell;
}

NodeId linear(Graph& graph, Connectivity connectivity, NodeId weight, NodeId input, std::optional<NodeId> bias) {
  if (connectivity == Connectivity::Convolutional) return graph.conv2d(input, weight, bias);
  const NodeId product = graph.matmul(weight, input);
  return bias ? graph.add(product, *bias) : product;
}

}  // namespace

CellNodes bind_cell(Graph& graph, const BoundParams& params, const std::string& prefix) {
  auto p = [&](const char* name) { return params(prefix + "." + name); };
  CellNodes cell;
  cell.w_x = fuse(graph, {p("w_xi"), p("w_xf"), p("w_xc"), p("w_xo")});
  cell.w_h = fuse(graph, {p("w_hi"), p("w_hf"), p("w_hc"), p("w_ho")});
  cell.bias = fuse(graph, {p("b_i"), p("b_f"), p("b_c"), p("b_o")});
  cell.w_ci = p("w_ci");
  cell.w_cf = p("w_cf");
  cell.w_co = p("w_co");
  cell.hidden = graph.value(p("b_i")).dim(0);
  return cell;
}

CellStepNodes cell_step(Graph& graph, Connectivity connectivity, const CellNodes& cell, NodeId input,
                        const CellStateNodes& state) {
  const std::size_t h = cell.hidden;
  const NodeId pre = graph.add(linear(graph, connectivity, cell.w_x, input, cell.bias),
                               linear(graph, connectivity, cell.w_h, state.h, std::nullopt));
  const NodeId pre_i = graph.slice(pre, 0, h);
  const NodeId pre_f = graph.slice(pre, h, h);
  const NodeId pre_c = graph.slice(pre, 2 * h, h);
  const NodeId pre_o = graph.slice(pre, 3 * h, h);

  const NodeId i = graph.sigmoid(graph.add(pre_i, graph.hadamard(cell.w_ci, state.c)));
  const NodeId f = graph.sigmoid(graph.add(pre_f, graph.hadamard(cell.w_cf, state.c)));
  const NodeId c = graph.add(graph.hadamard(f, state.c), graph.hadamard(i, graph.tanh(pre_c)));
  const NodeId o = graph.sigmoid(graph.add(pre_o, graph.hadamard(cell.w_co, c)));
  const NodeId hidden = graph.hadamard(o, graph.tanh(c));
  return CellStepNodes{CellStateNodes{hidden, c}, i, f, o};
}

CellStepResult cell_step_with_gates(const ConvLSTMCellParams& params, const Tensor& input,
                                    const CellState& state) {
  params.validate();
  if (state.h.shape() != params.w_ci.shape() || state.c.shape() != params.w_ci.shape()) {
    throw DimensionError("cell state shape " + to_string(state.h.shape()) + " does not match peepholes " +
                         to_string(params.w_ci.shape()));
  }
  Graph graph;
  const CellNodes cell = bind_cell_tensors(graph, params);
  const CellStateNodes prev{graph.constant(state.h), graph.constant(state.c)};
  const CellStepNodes step = cell_step(graph, Connectivity::Convolutional, cell, graph.constant(input), prev);
  return CellStepResult{CellState{graph.value(step.state.h), graph.value(step.state.c)},
                        graph.value(step.input_gate), graph.value(step.forget_gate),
                        graph.value(step.output_gate)};
}

CellState cell_step(const ConvLSTMCellParams& params, const Tensor& input, const CellState& state) {
  return cell_step_with_gates(params, input, state).state;
}

S2SNodes bind_recurrent(Graph& graph, const BoundParams& params, const std::string& prefix,
                        Connectivity connectivity, std::vector<Shape> state_shapes) {
  S2SNodes m;
  m.connectivity = connectivity;
  m.enc_embed_w = params(prefix + "enc.embed.w");
  m.enc_embed_b = params(prefix + "enc.embed.b");
  m.dec_embed_w = params(prefix + "dec.embed.w");
  m.dec_embed_b = params(prefix + "dec.embed.b");
  m.out_w = params(prefix + "out.w");
  m.out_b = params(prefix + "out.b");
  for (std::size_t l = 0; l < state_shapes.size(); ++l) {
    m.encoder.push_back(bind_cell(graph, params, fmt::format("{}enc.cell{}", prefix, l)));
    m.decoder.push_back(bind_cell(graph, params, fmt::format("{}dec.cell{}", prefix, l)));
  }
  m.state_shapes = std::move(state_shapes);
  return m;
}

S2SNodes bind_s2s(Graph& graph, const BoundParams& params, const S2SConfig& config) {
  std::vector<Shape> shapes;
  for (std::size_t h : config.hidden_channels) shapes.push_back(Shape{h, config.grid_rows, config.grid_cols});
  return bind_recurrent(graph, params, "", Connectivity::Convolutional, std::move(shapes));
}

namespace {

NodeId embed(Graph& graph, const S2SNodes& m, NodeId w, NodeId b, NodeId x) {
  return graph.tanh(linear(graph, m.connectivity, w, x, b));
}

std::vector<CellStateNodes> stack_step(Graph& graph, const S2SNodes& m, const std::vector<CellNodes>& cells,
                                       NodeId embedded, const std::vector<CellStateNodes>& states) {
  std::vector<CellStateNodes> next;
  next.reserve(cells.size());
  NodeId x = embedded;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    const CellStepNodes step = cell_step(graph, m.connectivity, cells[l], x, states[l]);
    next.push_back(step.state);
    x = step.state.h;
  }
  return next;
}

}  // namespace

std::vector<CellStateNodes> encode(Graph& graph, const S2SNodes& model, std::span<const NodeId> inputs) {
  if (inputs.empty()) throw ContractError("encode: empty input sequence");
  std::vector<CellStateNodes> states;
  for (const Shape& s : model.state_shapes) {
    states.push_back(CellStateNodes{graph.constant(Tensor(s)), graph.constant(Tensor(s))});
  }
  for (NodeId x : inputs) {
    const NodeId e = embed(graph, model, model.enc_embed_w, model.enc_embed_b, x);
    states = stack_step(graph, model, model.encoder, e, states);
  }
  return states;
}

std::vector<NodeId> decode(Graph& graph, const S2SNodes& model, std::vector<CellStateNodes> states,
                           NodeId first_input, std::size_t horizon, std::span<const NodeId> targets,
                           const std::vector<bool>& forcing) {
  if (horizon == 0) throw ContractError("decode: horizon must be >= 1");
  if (states.size() != model.decoder.size()) throw ContractError("decode: one initial state per layer required");
  if (!forcing.empty() && forcing.size() + 1 != horizon) {
    throw ContractError("decode: forcing mask must have horizon-1 entries");
  }
  std::vector<NodeId> predictions;
  predictions.reserve(horizon);
  NodeId input = first_input;
  for (std::size_t k = 0; k < horizon; ++k) {
    if (k > 0) {
      const bool forced = !forcing.empty() && forcing[k - 1];
      if (forced) {
        if (targets.size() < k) throw ContractError("decode: teacher forcing without enough targets");
        input = targets[k - 1];
      } else {
        input = predictions.back();
      }
    }
    const NodeId e = embed(graph, model, model.dec_embed_w, model.dec_embed_b, input);
    states = stack_step(graph, model, model.decoder, e, states);
    predictions.push_back(linear(graph, model.connectivity, model.out_w, states.back().h, model.out_b));
  }
  return predictions;
}

std::vector<bool> draw_teacher_forcing(std::size_t horizon, double tf_prob, Rng& rng) {
  std::vector<bool> mask(horizon > 0 ? horizon - 1 : 0, false);
  if (tf_prob <= 0.0) return mask;
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = rng.bernoulli(tf_prob);
  return mask;
}

std::vector<NodeId> unstack_constant(Graph& graph, const Tensor& sequence) {
  if (sequence.rank() < 1) throw DimensionError("unstack of a scalar");
  Shape inner(sequence.shape().begin() + 1, sequence.shape().end());
  const std::size_t len = shape_size(inner);
  std::vector<NodeId> out;
  for (std::size_t t = 0; t < sequence.dim(0); ++t) {
    const auto begin = sequence.data().begin() + static_cast<long>(t * len);
    out.push_back(graph.constant(Tensor(inner, std::vector<double>(begin, begin + static_cast<long>(len)))));
  }
  return out;
}

std::vector<NodeId> unstack(Graph& graph, NodeId sequence) {
  const Shape shape = graph.value(sequence).shape();
  if (shape.empty()) throw DimensionError("unstack of a scalar");
  const Shape inner(shape.begin() + 1, shape.end());
  std::vector<NodeId> out;
  for (std::size_t t = 0; t < shape[0]; ++t) out.push_back(graph.reshape(graph.slice(sequence, t, 1), inner));
  return out;
}

NodeId stack(Graph& graph, std::span<const NodeId> items) {
  std::vector<NodeId> rows;
  rows.reserve(items.size());
  for (NodeId item : items) {
    Shape s = graph.value(item).shape();
    s.insert(s.begin(), 1);
    rows.push_back(graph.reshape(item, s));
  }
  return graph.concat(rows);
}

namespace {

void check_snapshot(const S2SConfig& config, const Tensor& x, const char* what) {
  const Shape want{config.services, config.grid_rows, config.grid_cols};
  if (x.shape() != want) {
    throw DimensionError(fmt::format("{}: snapshot shape {} does not match {}", what, to_string(x.shape()),
                                     to_string(want)));
  }
}

}  // namespace

std::vector<CellState> encode(const S2SConfig& config, const ModelParams& params, std::span<const Tensor> inputs) {
  config.validate();
  if (inputs.size() != config.input_length) {
    throw ContractError(fmt::format("encode: expected {} snapshots, got {}", config.input_length, inputs.size()));
  }
  Graph graph;
  BoundParams bound(graph, params);
  const S2SNodes model = bind_s2s(graph, bound, config);
  std::vector<NodeId> xs;
  for (const Tensor& x : inputs) {
    check_snapshot(config, x, "encode");
    xs.push_back(graph.constant(x));
  }
  std::vector<CellState> out;
  for (const CellStateNodes& s : encode(graph, model, xs)) out.push_back(CellState{graph.value(s.h), graph.value(s.c)});
  return out;
}

std::vector<Tensor> decode(const S2SConfig& config, const ModelParams& params,
                           const std::vector<CellState>& init_states, const Tensor& first_input,
                           std::size_t horizon, const std::vector<Tensor>* targets, double tf_prob, Rng* rng) {
  config.validate();
  if (tf_prob > 0.0 && targets == nullptr) throw ContractError("decode: teacher forcing requires targets");
  if (tf_prob > 0.0 && rng == nullptr) throw ContractError("decode: teacher forcing requires a generator");
  check_snapshot(config, first_input, "decode");
  Graph graph;
  BoundParams bound(graph, params);
  const S2SNodes model = bind_s2s(graph, bound, config);
  std::vector<CellStateNodes> states;
  for (std::size_t l = 0; l < init_states.size(); ++l) {
    if (init_states[l].h.shape() != model.state_shapes.at(l)) {
      throw DimensionError("decode: initial state shape mismatch on layer " + std::to_string(l));
    }
    states.push_back(CellStateNodes{graph.constant(init_states[l].h), graph.constant(init_states[l].c)});
  }
  std::vector<NodeId> target_nodes;
  if (targets != nullptr) {
    for (const Tensor& t : *targets) {
      check_snapshot(config, t, "decode");
      target_nodes.push_back(graph.constant(t));
    }
  }
  std::vector<bool> forcing;
  if (tf_prob > 0.0) {
    if (target_nodes.size() + 1 < horizon) throw ContractError("decode: not enough targets for teacher forcing");
    forcing = draw_teacher_forcing(horizon, tf_prob, *rng);
  }
  std::vector<Tensor> out;
  for (NodeId p : decode(graph, model, std::move(states), graph.constant(first_input), horizon, target_nodes, forcing)) {
    out.push_back(graph.value(p));
  }
  return out;
}

Tensor forecast(const S2SConfig& config, const ModelParams& params, const Tensor& input) {
  config.validate();
  const Shape want{config.input_length, config.services, config.grid_rows, config.grid_cols};
  if (input.shape() != want) {
    throw DimensionError("forecast: input shape " + to_string(input.shape()) + " does not match " + to_string(want));
  }
  Graph graph;
  BoundParams bound(graph, params);
  const S2SNodes model = bind_s2s(graph, bound, config);
  const std::vector<NodeId> xs = unstack_constant(graph, input);
  auto states = encode(graph, model, xs);
  const auto preds = decode(graph, model, std::move(states), xs.back(), config.horizon, {}, {});
  return graph.value(stack(graph, preds));
}

Tensor glorot_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_cell_params(ModelParams& params, Rng& rng, const std::string& prefix, std::size_t in,
                     std::size_t hidden, const Shape& kernel_inner, const Shape& state_inner) {
  const std::size_t taps = shape_size(kernel_inner);
  auto kernel = [&](std::size_t fan) {
    Shape s{hidden, fan};
    s.insert(s.end(), kernel_inner.begin(), kernel_inner.end());
    return glorot_uniform(rng, s, fan * taps, hidden * taps);
  };
  Shape state{hidden};
  state.insert(state.end(), state_inner.begin(), state_inner.end());
  // Dense cells keep biases as [hidden, 1] columns so they add onto matmul output.
  const Shape bias = kernel_inner.empty() ? Shape{hidden, 1} : Shape{hidden};
  for (const char* gate : {"i", "f", "c", "o"}) {
    params.add(fmt::format("{}.w_x{}", prefix, gate), kernel(in));
    params.add(fmt::format("{}.w_h{}", prefix, gate), kernel(hidden));
  }
  for (const char* gate : {"i", "f", "o"}) params.add(fmt::format("{}.w_c{}", prefix, gate), Tensor(state));
  params.add(prefix + ".b_i", Tensor(bias));
  params.add(prefix + ".b_f", Tensor(bias, 1.0));
  params.add(prefix + ".b_c", Tensor(bias));
  params.add(prefix + ".b_o", Tensor(bias));
}

ModelParams init_params(const S2SConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams p;
  const std::size_t k = config.kernel_size;
  const Shape kk{k, k};
  const Shape grid{config.grid_rows, config.grid_cols};
  auto embedding = [&](const std::string& name) {
    p.add(name + ".w", glorot_uniform(rng, Shape{config.embed_channels, config.services, k, k},
                                      config.services * k * k, config.embed_channels * k * k));
    p.add(name + ".b", Tensor(Shape{config.embed_channels}));
  };
  for (const char* side : {"enc", "dec"}) {
    embedding(std::string(side) + ".embed");
    std::size_t in = config.embed_channels;
    for (std::size_t l = 0; l < config.hidden_channels.size(); ++l) {
      add_cell_params(p, rng, fmt::format("{}.cell{}", side, l), in, config.hidden_channels[l], kk, grid);
      in = config.hidden_channels[l];
    }
  }
  const std::size_t top = config.hidden_channels.back();
  p.add("out.w", glorot_uniform(rng, Shape{config.services, top, k, k}, top * k * k, config.services * k * k));
  p.add("out.b", Tensor(Shape{config.services}));
  return p;
}

}  // namespace mtf
