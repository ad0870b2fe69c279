#include "mtf/model.hpp"

#include "mtf/error.hpp"
#include "mtf/hash.hpp"

namespace mtf {

namespace {

template <class F>
decltype(auto) visit_spec(const ModelConfig& c, F&& f) {
  return std::visit(std::forward<F>(f), c.spec);
}

std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ContractError("unknown activation: " + s);
}

}  // namespace

ModelKind ModelConfig::kind() const {
  if (const auto* b = std::get_if<BaselineConfig>(&spec)) return b->kind;
  return ModelKind::ConvLstm;
}

std::size_t ModelConfig::input_length() const {
  return visit_spec(*this, [](const auto& c) { return c.input_length; });
}
std::size_t ModelConfig::horizon() const {
  return visit_spec(*this, [](const auto& c) { return c.horizon; });
}
std::size_t ModelConfig::services() const {
  return visit_spec(*this, [](const auto& c) { return c.services; });
}
std::size_t ModelConfig::grid_rows() const {
  return visit_spec(*this, [](const auto& c) { return c.grid_rows; });
}
std::size_t ModelConfig::grid_cols() const {
  return visit_spec(*this, [](const auto& c) { return c.grid_cols; });
}
double ModelConfig::teacher_forcing() const {
  return visit_spec(*this, [](const auto& c) { return c.teacher_forcing; });
}
std::uint64_t ModelConfig::seed() const {
  return visit_spec(*this, [](const auto& c) { return c.seed; });
}

bool ModelConfig::is_sequential() const {
  const ModelKind k = kind();
  return k == ModelKind::ConvLstm || k == ModelKind::Lstm;
}

void ModelConfig::validate() const {
  visit_spec(*this, [](const auto& c) { c.validate(); });
}

void ModelConfig::set_shape(std::size_t services, std::size_t rows, std::size_t cols, std::size_t input_length,
                            std::size_t horizon) {
  std::visit(
      [&](auto& c) {
        c.services = services;
        c.grid_rows = rows;
        c.grid_cols = cols;
        c.input_length = input_length;
        c.horizon = horizon;
      },
      spec);
}

void ModelConfig::set_seed(std::uint64_t seed) {
  std::visit([&](auto& c) { c.seed = seed; }, spec);
}

ModelConfig default_model_config(ModelKind kind) {
  if (kind == ModelKind::ConvLstm) return ModelConfig{S2SConfig{}};
  return ModelConfig{desk_preset(kind)};
}

ModelConfig full_scale_model_config(ModelKind kind) {
  if (kind == ModelKind::ConvLstm) return ModelConfig{S2SConfig{}};
  return ModelConfig{full_scale_preset(kind)};
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json j;
  j["kind"] = to_string(config.kind());
  if (const auto* s = std::get_if<S2SConfig>(&config.spec)) {
    j["grid_rows"] = s->grid_rows;
    j["grid_cols"] = s->grid_cols;
    j["services"] = s->services;
    j["embed_channels"] = s->embed_channels;
    j["hidden_channels"] = s->hidden_channels;
    j["kernel_size"] = s->kernel_size;
    j["input_length"] = s->input_length;
    j["horizon"] = s->horizon;
    j["teacher_forcing"] = s->teacher_forcing;
    j["seed"] = s->seed;
  } else {
    const auto& b = std::get<BaselineConfig>(config.spec);
    j["depth"] = b.depth;
    j["width"] = b.width;
    j["kernel_size"] = b.kernel_size;
    j["head_channels"] = b.head_channels;
    j["embed_units"] = b.embed_units;
    j["activation"] = activation_name(b.activation);
    j["grid_rows"] = b.grid_rows;
    j["grid_cols"] = b.grid_cols;
    j["services"] = b.services;
    j["input_length"] = b.input_length;
    j["horizon"] = b.horizon;
    j["teacher_forcing"] = b.teacher_forcing;
    j["norm_epsilon"] = b.norm_epsilon;
    j["norm_momentum"] = b.norm_momentum;
    j["seed"] = b.seed;
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
    ModelConfig config;
    if (kind == ModelKind::ConvLstm) {
      S2SConfig s;
      s.grid_rows = j.at("grid_rows").get<std::size_t>();
      s.grid_cols = j.at("grid_cols").get<std::size_t>();
      s.services = j.at("services").get<std::size_t>();
      s.embed_channels = j.at("embed_channels").get<std::size_t>();
      s.hidden_channels = j.at("hidden_channels").get<std::vector<std::size_t>>();
      s.kernel_size = j.at("kernel_size").get<std::size_t>();
      s.input_length = j.at("input_length").get<std::size_t>();
      s.horizon = j.at("horizon").get<std::size_t>();
      s.teacher_forcing = j.at("teacher_forcing").get<double>();
      s.seed = j.at("seed").get<std::uint64_t>();
      config.spec = s;
    } else {
      BaselineConfig b;
      b.kind = kind;
      b.depth = j.at("depth").get<std::size_t>();
      b.width = j.at("width").get<std::size_t>();
      b.kernel_size = j.at("kernel_size").get<std::size_t>();
      b.head_channels = j.at("head_channels").get<std::size_t>();
      b.embed_units = j.at("embed_units").get<std::size_t>();
      b.activation = parse_activation(j.at("activation").get<std::string>());
      b.grid_rows = j.at("grid_rows").get<std::size_t>();
      b.grid_cols = j.at("grid_cols").get<std::size_t>();
      b.services = j.at("services").get<std::size_t>();
      b.input_length = j.at("input_length").get<std::size_t>();
      b.horizon = j.at("horizon").get<std::size_t>();
      b.teacher_forcing = j.at("teacher_forcing").get<double>();
      b.norm_epsilon = j.at("norm_epsilon").get<double>();
      b.norm_momentum = j.at("norm_momentum").get<double>();
      b.seed = j.at("seed").get<std::uint64_t>();
      config.spec = b;
    }
    config.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("invalid model config: ") + e.what());
  }
}

std::uint64_t config_hash(const ModelConfig& config) { return fnv1a(to_json(config).dump()); }

ModelParams init_params(const ModelConfig& config) {
  return visit_spec(config, [](const auto& c) { return init_params(c); });
}

ForwardPass build_forward(Graph& graph, const ModelConfig& config, const BoundParams& params, NodeId input,
                          std::optional<NodeId> target, const std::vector<bool>& forcing) {
  ForwardPass pass;
  if (const auto* s = std::get_if<S2SConfig>(&config.spec)) {
    const Shape want{s->input_length, s->services, s->grid_rows, s->grid_cols};
    if (graph.value(input).shape() != want) {
      throw DimensionError("convlstm forward: input shape " + to_string(graph.value(input).shape()) +
                           " does not match " + to_string(want));
    }
    const S2SNodes model = bind_s2s(graph, params, *s);
    const std::vector<NodeId> xs = unstack(graph, input);
    std::vector<NodeId> ts;
    if (target) ts = unstack(graph, *target);
    auto states = encode(graph, model, xs);
    const auto preds = decode(graph, model, std::move(states), xs.back(), s->horizon, ts, forcing);
    pass.output = stack(graph, preds);
    return pass;
  }
  const auto& b = std::get<BaselineConfig>(config.spec);
  switch (b.kind) {
    case ModelKind::Mlp: pass.output = mlp_forward(graph, b, params, input); break;
    case ModelKind::Cnn: pass.output = cnn_forward(graph, b, params, input, &pass.norms); break;
    case ModelKind::Cnn3d: pass.output = cnn3d_forward(graph, b, params, input, &pass.norms); break;
    case ModelKind::Lstm: pass.output = lstm_s2s_forward(graph, b, params, input, target, forcing); break;
    case ModelKind::Persistence: pass.output = persistence_forecast(graph, input, b.horizon); break;
    case ModelKind::ConvLstm: throw ContractError("build_forward: inconsistent model config");
  }
  return pass;
}

Tensor forecast(const ModelConfig& config, const ModelParams& params, const Tensor& input) {
  Graph graph;
  BoundParams bound(graph, params);
  const ForwardPass pass = build_forward(graph, config, bound, graph.constant(input));
  return graph.value(pass.output);
}

}  // namespace mtf
