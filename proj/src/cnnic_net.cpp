#include "cnnic/cnnic_net.hpp"

#include <algorithm>

namespace cnnic {

std::string to_string(Preset preset) {
  switch (preset) {
    case Preset::Cnnic2: return "cnnic2";
    case Preset::Cnnic3: return "cnnic3";
    case Preset::Tiny: return "tiny";
  }
  return "?";
}

Preset parse_preset(std::string_view text) {
  if (text == "cnnic2" || text == "CNNIC-2" || text == "CNNIC2") return Preset::Cnnic2;
  if (text == "cnnic3" || text == "CNNIC-3" || text == "CNNIC3") return Preset::Cnnic3;
  if (text == "tiny") return Preset::Tiny;
  throw ConfigError("unknown preset '" + std::string(text) + "' (expected cnnic2, cnnic3, tiny)");
}

std::string to_string(Averaging averaging) {
  return averaging == Averaging::Logits ? "logits" : "probs";
}

Averaging parse_averaging(std::string_view text) {
  if (text == "logits") return Averaging::Logits;
  if (text == "probs" || text == "probabilities") return Averaging::Probabilities;
  throw ConfigError("unknown averaging '" + std::string(text) + "' (expected logits, probs)");
}

std::vector<LayerSpec> preset_layers(Preset preset, std::size_t num_classes) {
  using K = LayerSpec::Kind;
  switch (preset) {
    case Preset::Cnnic2:
      return {{K::Conv, 5, 64, false}, {K::Pool, 0, 0, true},    {K::Conv, 5, 64, false},
              {K::Pool, 0, 0, true},   {K::Dense, 0, 1024, true}, {K::Logits, 0, num_classes, true}};
    case Preset::Cnnic3:
      return {{K::Conv, 5, 32, false}, {K::Conv, 5, 64, false},   {K::Pool, 0, 0, true},
              {K::Conv, 5, 64, false}, {K::Pool, 0, 0, true},     {K::Dense, 0, 1024, true},
              {K::Logits, 0, num_classes, true}};
    case Preset::Tiny:
      return {{K::Conv, 3, 3, false}, {K::Pool, 0, 0, true}, {K::Dense, 0, 6, true},
              {K::Logits, 0, num_classes, true}};
  }
  throw ConfigError("unknown preset");
}

std::size_t CnnicConfig::grid_side() const {
  if (patch_stride == 0) throw ConfigError("patch_stride must be >= 1");
  if (patch_size == 0 || patch_size > image_size) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " must lie in [1, image_size " +
                      std::to_string(image_size) + "]");
  }
  return (image_size - patch_size) / patch_stride + 1;
}

void CnnicConfig::validate() const {
  grid_side();
  if (num_kernels < 1) throw ConfigError("num_kernels must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ConfigError("dropout_p must lie in [0,1), got " + std::to_string(dropout_p));
  }
  trace_shapes(*this);
}

std::vector<TracedLayer> trace_shapes(const CnnicConfig& config) {
  config.grid_side();
  std::size_t side = config.patch_size;
  std::size_t channels = 1;
  std::size_t conv_index = 0;
  std::size_t pool_index = 0;
  std::vector<TracedLayer> out;
  for (const LayerSpec& layer : preset_layers(config.preset, config.num_classes)) {
    switch (layer.kind) {
      case LayerSpec::Kind::Conv:
        if (layer.kernel > side) {
          throw ConfigError("infeasible geometry: " + std::to_string(layer.kernel) + "x" +
                            std::to_string(layer.kernel) + " convolution on " +
                            std::to_string(side) + "x" + std::to_string(side) + " map (patch_size " +
                            std::to_string(config.patch_size) + ", preset " +
                            to_string(config.preset) + ")");
        }
        side = side - layer.kernel + 1;
        channels = layer.units;
        out.push_back({"conv" + std::to_string(++conv_index), {channels, side, side}});
        break;
      case LayerSpec::Kind::Pool:
        if (side < 2 || side % 2 != 0) {
          throw ConfigError("infeasible geometry: 2x2 pooling on odd or unit " +
                            std::to_string(side) + "x" + std::to_string(side) +
                            " map (patch_size " + std::to_string(config.patch_size) +
                            ", preset " + to_string(config.preset) + ")");
        }
        side /= 2;
        out.push_back({"pool" + std::to_string(++pool_index), {channels, side, side}});
        break;
      case LayerSpec::Kind::Dense:
        out.push_back({"fc", {layer.units}});
        break;
      case LayerSpec::Kind::Logits:
        out.push_back({"logits", {layer.units}});
        break;
    }
  }
  return out;
}

std::vector<ParamShape> kernel_parameter_shapes(const CnnicConfig& config) {
  const auto traced = trace_shapes(config);
  const auto layers = preset_layers(config.preset, config.num_classes);
  std::vector<ParamShape> shapes;
  std::size_t channels = 1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const TracedLayer& t = traced[i];
    switch (layer.kind) {
      case LayerSpec::Kind::Conv:
        shapes.push_back({t.name + ".weight", {layer.units, channels, layer.kernel, layer.kernel}});
        shapes.push_back({t.name + ".bias", {layer.units}});
        break;
      case LayerSpec::Kind::Pool:
        break;
      case LayerSpec::Kind::Dense:
      case LayerSpec::Kind::Logits: {
        const std::size_t in = i == 0 ? 1 : element_count(traced[i - 1].output);
        shapes.push_back({t.name + ".weight", {in, layer.units}});
        shapes.push_back({t.name + ".bias", {layer.units}});
        break;
      }
    }
    if (t.output.size() == 3) channels = t.output[0];
  }
  return shapes;
}

ParameterCount count_parameters(const CnnicConfig& config) {
  config.validate();
  ParameterCount count;
  const auto shapes = kernel_parameter_shapes(config);
  for (std::size_t i = 0; i < shapes.size(); i += 2) {
    const std::string layer = shapes[i].name.substr(0, shapes[i].name.find('.'));
    const std::size_t n = element_count(shapes[i].shape) + element_count(shapes[i + 1].shape);
    count.per_layer.emplace_back(layer, n);
    count.per_kernel += n;
  }
  count.total = count.per_kernel * config.num_kernels;
  return count;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> CnnicModel<T>::named_parameters() {
  const auto shapes = kernel_parameter_shapes(config);
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      out.emplace_back("k" + std::to_string(k) + "." + shapes[i].name, &kernels[k].tensors.at(i));
    }
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> CnnicModel<T>::named_parameters() const {
  const auto shapes = kernel_parameter_shapes(config);
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      out.emplace_back("k" + std::to_string(k) + "." + shapes[i].name, &kernels[k].tensors.at(i));
    }
  }
  return out;
}

template <typename T>
CnnicModel<T> zero_model(const CnnicConfig& config) {
  config.validate();
  CnnicModel<T> model{config, {}};
  const auto shapes = kernel_parameter_shapes(config);
  for (std::size_t k = 0; k < config.num_kernels; ++k) {
    SmallCnnWeights<T> w;
    for (const auto& s : shapes) w.tensors.emplace_back(s.shape);
    model.kernels.push_back(std::move(w));
  }
  return model;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& images, std::size_t patch_size, std::size_t stride) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw DimensionError("extract_patches expects square [B,C,S,S] images, got " +
                         to_string(images.shape()));
  }
  const std::size_t batch = images.dim(0), channels = images.dim(1), side = images.dim(2);
  if (stride == 0) throw DimensionError("patch stride must be >= 1");
  if (patch_size == 0 || patch_size > side) {
    throw DimensionError("patch_size " + std::to_string(patch_size) + " exceeds image side " +
                         std::to_string(side));
  }
  const std::size_t g = (side - patch_size) / stride + 1;
  Tensor<T> out(Shape{batch, g * g, channels, patch_size, patch_size});
  T* dst = out.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        for (std::size_t c = 0; c < channels; ++c) {
          const T* plane = images.data().data() + (n * channels + c) * side * side;
          for (std::size_t y = 0; y < patch_size; ++y) {
            const T* src = plane + (gy * stride + y) * side + gx * stride;
            dst = std::copy_n(src, patch_size, dst);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Var small_cnn_forward(Tape<T>& tape, Var patches, std::span<const Var> params,
                      const CnnicConfig& config, Mode mode, DropoutKey key) {
  const auto layers = preset_layers(config.preset, config.num_classes);
  const auto shapes = kernel_parameter_shapes(config);
  if (params.size() != shapes.size()) {
    throw DimensionError("small CNN expects " + std::to_string(shapes.size()) +
                         " parameter tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (tape.value(params[i]).shape() != shapes[i].shape) {
      throw DimensionError("parameter " + shapes[i].name + " has shape " +
                           to_string(tape.value(params[i]).shape()) + ", expected " +
                           to_string(shapes[i].shape));
    }
  }
  const Tensor<T>& in = tape.value(patches);
  if (in.rank() != 4 || in.dim(1) != 1 || in.dim(2) != config.patch_size ||
      in.dim(3) != config.patch_size) {
    throw DimensionError("small CNN expects [N,1," + std::to_string(config.patch_size) + "," +
                         std::to_string(config.patch_size) + "] patches, got " +
                         to_string(in.shape()));
  }
  const std::size_t n = in.dim(0);

  Var h = patches;
  std::size_t p = 0;
  std::uint64_t site = 0;
  for (const LayerSpec& layer : layers) {
    switch (layer.kind) {
      case LayerSpec::Kind::Conv:
        h = conv2d_relu(tape, h, params[p], params[p + 1], 1, true);
        p += 2;
        break;
      case LayerSpec::Kind::Pool:
        h = avg_pool_2x2(tape, h);
        break;
      case LayerSpec::Kind::Dense:
      case LayerSpec::Kind::Logits:
        if (tape.value(h).rank() != 2) {
          h = reshape(tape, h, Shape{n, tape.value(h).size() / n});
        }
        h = dense(tape, h, params[p], params[p + 1]);
        if (layer.kind == LayerSpec::Kind::Dense) h = relu(tape, h);
        p += 2;
        break;
    }
    if (layer.dropout) {
      h = dropout(tape, h, config.dropout_p, mode, DropoutKey{key.seed, key.layer + site, key.step});
    }
    ++site;
  }
  return h;
}

template <typename T>
CnnicGraph<T> record_cnnic(Tape<T>& tape, const Tensor<T>& images,
                           std::span<const std::vector<Var>> kernel_params,
                           const CnnicConfig& config, Mode mode, std::uint64_t seed,
                           std::uint64_t step) {
  config.validate();
  if (kernel_params.size() != config.num_kernels) {
    throw DimensionError("expected " + std::to_string(config.num_kernels) +
                         " kernel weight sets, got " + std::to_string(kernel_params.size()));
  }
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != config.image_size ||
      images.dim(3) != config.image_size) {
    throw DimensionError("expected [B,1," + std::to_string(config.image_size) + "," +
                         std::to_string(config.image_size) + "] images, got " +
                         to_string(images.shape()));
  }
  const std::size_t batch = images.dim(0);
  const std::size_t positions = config.positions();
  Tensor<T> patches = extract_patches(images, config.patch_size, config.patch_stride)
                          .reshaped(Shape{batch * positions, 1, config.patch_size,
                                          config.patch_size});
  const Var x = tape.constant(std::move(patches));

  CnnicGraph<T> graph;
  graph.batch = batch;
  for (std::size_t k = 0; k < config.num_kernels; ++k) {
    const DropoutKey key{seed, 64 * k, step};
    graph.members.push_back(small_cnn_forward(tape, x, std::span<const Var>(kernel_params[k]),
                                              config, mode, key));
  }
  if (config.averaging == Averaging::Logits) {
    graph.pooled = ensemble_mean(tape, std::span<const Var>(graph.members), batch);
  } else {
    graph.averaging = Averaging::Probabilities;
    std::vector<Var> member_probs;
    for (Var m : graph.members) member_probs.push_back(softmax(tape, m));
    graph.pooled = ensemble_mean(tape, std::span<const Var>(member_probs), batch);
  }
  return graph;
}

template <typename T>
Tensor<T> logit_map(const Tape<T>& tape, const CnnicGraph<T>& graph) {
  const std::size_t kernels = graph.members.size();
  const Shape& member = tape.value(graph.members.at(0)).shape();
  const std::size_t positions = member[0] / graph.batch, classes = member[1];
  Tensor<T> out(Shape{graph.batch, kernels, positions, classes});
  for (std::size_t k = 0; k < kernels; ++k) {
    const Tensor<T>& z = tape.value(graph.members[k]);
    for (std::size_t n = 0; n < graph.batch; ++n) {
      std::copy_n(z.data().data() + n * positions * classes, positions * classes,
                  out.data().data() + (n * kernels + k) * positions * classes);
    }
  }
  return out;
}

template <typename T>
Tensor<T> graph_probs(const Tape<T>& tape, const CnnicGraph<T>& graph) {
  const Tensor<T>& pooled = tape.value(graph.pooled);
  return graph.averaging == Averaging::Logits ? softmax_rows(pooled) : pooled;
}

template <typename T>
CnnicLoss<T> cnnic_loss(Tape<T>& tape, const CnnicGraph<T>& graph, std::span<const int> labels) {
  if (graph.averaging == Averaging::Logits) {
    auto ce = softmax_cross_entropy(tape, graph.pooled, labels);
    return {ce.loss, std::move(ce.probs)};
  }
  const Var loss = nll_loss(tape, graph.pooled, labels);
  return {loss, tape.value(graph.pooled)};
}

template <typename T>
CnnicOutput<T> cnnic_forward(const Tensor<T>& images, const CnnicModel<T>& model, Mode mode,
                             std::uint64_t seed, std::uint64_t step) {
  Tape<T> tape(false);
  std::vector<std::vector<Var>> params;
  for (const auto& kernel : model.kernels) {
    std::vector<Var> vars;
    for (const auto& t : kernel.tensors) vars.push_back(tape.constant(t));
    params.push_back(std::move(vars));
  }
  const auto graph = record_cnnic(tape, images, std::span<const std::vector<Var>>(params),
                                  model.config, mode, seed, step);
  return {graph_probs(tape, graph), logit_map(tape, graph)};
}

template <typename T>
Tensor<T> small_cnn_forward(const Tensor<T>& patches, const SmallCnnWeights<T>& weights,
                            const CnnicConfig& config, Mode mode, DropoutKey key) {
  Tape<T> tape(false);
  std::vector<Var> vars;
  for (const auto& t : weights.tensors) vars.push_back(tape.constant(t));
  const Var x = tape.constant(patches);
  const Var out = small_cnn_forward(tape, x, std::span<const Var>(vars), config, mode, key);
  return tape.value(out);
}

template <typename T>
std::vector<int> predict(const Tensor<T>& probs) {
  if (probs.rank() != 2) throw DimensionError("predict expects [B,C], got " + to_string(probs.shape()));
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  std::vector<int> out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* row = probs.data().data() + n * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

#define CNNIC_INSTANTIATE(T)                                                                   \
  template struct CnnicModel<T>;                                                               \
  template CnnicModel<T> zero_model<T>(const CnnicConfig&);                                    \
  template Tensor<T> extract_patches(const Tensor<T>&, std::size_t, std::size_t);             \
  template Var small_cnn_forward(Tape<T>&, Var, std::span<const Var>, const CnnicConfig&, Mode, \
                                 DropoutKey);                                                  \
  template CnnicGraph<T> record_cnnic(Tape<T>&, const Tensor<T>&,                              \
                                      std::span<const std::vector<Var>>, const CnnicConfig&,   \
                                      Mode, std::uint64_t, std::uint64_t);                     \
  template Tensor<T> logit_map(const Tape<T>&, const CnnicGraph<T>&);                          \
  template Tensor<T> graph_probs(const Tape<T>&, const CnnicGraph<T>&);                        \
  template CnnicLoss<T> cnnic_loss(Tape<T>&, const CnnicGraph<T>&, std::span<const int>);      \
  template CnnicOutput<T> cnnic_forward(const Tensor<T>&, const CnnicModel<T>&, Mode,          \
                                        std::uint64_t, std::uint64_t);                         \
  template Tensor<T> small_cnn_forward(const Tensor<T>&, const SmallCnnWeights<T>&,            \
                                       const CnnicConfig&, Mode, DropoutKey);                  \
  template std::vector<int> predict(const Tensor<T>&);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
