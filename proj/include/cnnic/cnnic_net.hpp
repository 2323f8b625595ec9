#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cnnic/layers.hpp"
#include "cnnic/tape.hpp"
#include "cnnic/tensor.hpp"

namespace cnnic {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Small-CNN kernel architectures. Cnnic2 and Cnnic3 are the two published
/// columns; Tiny is a shrunken variant for exhaustive gradient tests.
enum class Preset { Cnnic2, Cnnic3, Tiny };

/// How per-patch outputs are pooled. Logits: average raw logits, softmax
/// once. Probabilities: softmax each patch, average the distributions.
enum class Averaging { Logits, Probabilities };

std::string to_string(Preset preset);
Preset parse_preset(std::string_view text);
std::string to_string(Averaging averaging);
Averaging parse_averaging(std::string_view text);

struct LayerSpec {
  enum class Kind { Conv, Pool, Dense, Logits };
  Kind kind;
  std::size_t kernel = 0;  // conv window side
  std::size_t units = 0;   // conv filters or dense units
  bool dropout = false;    // dropout on this layer's output
};

/// Layer sequence of one small CNN. Conv and Dense layers apply ReLU; the
/// final Logits layer does not.
std::vector<LayerSpec> preset_layers(Preset preset, std::size_t num_classes = 10);

struct CnnicConfig {
  std::size_t image_size = 28;
  std::size_t patch_size = 24;
  std::size_t patch_stride = 2;
  std::size_t num_kernels = 1;
  Preset preset = Preset::Cnnic2;
  double dropout_p = 0.4;
  std::size_t num_classes = 10;
  Averaging averaging = Averaging::Logits;

  /// Patch grid side g = floor((image - patch) / stride) + 1.
  std::size_t grid_side() const;
  std::size_t positions() const { return grid_side() * grid_side(); }
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

struct ParamShape {
  std::string name;
  Shape shape;
};

/// Parameter tensors of one small CNN, in forward order (weight, bias pairs).
std::vector<ParamShape> kernel_parameter_shapes(const CnnicConfig& config);

struct TracedLayer {
  std::string name;
  Shape output;  // per patch, without the batch axis
};

/// Output extent of every layer for one patch; validates the geometry.
std::vector<TracedLayer> trace_shapes(const CnnicConfig& config);

struct ParameterCount {
  std::vector<std::pair<std::string, std::size_t>> per_layer;  // one kernel
  std::size_t per_kernel = 0;
  std::size_t total = 0;  // per_kernel * num_kernels
};

ParameterCount count_parameters(const CnnicConfig& config);

template <typename T>
struct SmallCnnWeights {
  std::vector<Tensor<T>> tensors;  // matches kernel_parameter_shapes
};

template <typename T>
struct CnnicModel {
  CnnicConfig config;
  std::vector<SmallCnnWeights<T>> kernels;

  /// Flattened "k<i>.<layer>.<weight|bias>" view, kernel-major.
  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const;
};

/// Zero-valued model with the right shapes.
template <typename T>
CnnicModel<T> zero_model(const CnnicConfig& config);

/// [B,C,S,S] -> [B, g*g, C, p, p]; positions row-major over the grid.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& images, std::size_t patch_size, std::size_t stride);

/// Records one small CNN on a tape. patches is [N,C,p,p], params follow
/// kernel_parameter_shapes. Returns logits [N,classes].
template <typename T>
Var small_cnn_forward(Tape<T>& tape, Var patches, std::span<const Var> params,
                      const CnnicConfig& config, Mode mode, DropoutKey key);

template <typename T>
struct CnnicGraph {
  Var pooled;                 // averaged logits, or averaged probabilities
  std::vector<Var> members;   // per kernel: [B*P, classes] logits
  std::size_t batch = 0;
  Averaging averaging = Averaging::Logits;
};

/// Records the full network. kernel_params[k] holds the parameter vars of
/// kernel k. Dropout sites are keyed by (seed, kernel/site, step).
template <typename T>
CnnicGraph<T> record_cnnic(Tape<T>& tape, const Tensor<T>& images,
                           std::span<const std::vector<Var>> kernel_params,
                           const CnnicConfig& config, Mode mode, std::uint64_t seed,
                           std::uint64_t step);

/// [B, K, P, classes] view of the member logits.
template <typename T>
Tensor<T> logit_map(const Tape<T>& tape, const CnnicGraph<T>& graph);

/// Final class distribution of a recorded graph.
template <typename T>
Tensor<T> graph_probs(const Tape<T>& tape, const CnnicGraph<T>& graph);

template <typename T>
struct CnnicLoss {
  Var loss;
  Tensor<T> probs;
};

template <typename T>
CnnicLoss<T> cnnic_loss(Tape<T>& tape, const CnnicGraph<T>& graph, std::span<const int> labels);

template <typename T>
struct CnnicOutput {
  Tensor<T> probs;      // [B, classes]
  Tensor<T> logit_map;  // [B, K, P, classes]
};

/// Value-level forward without gradient bookkeeping.
template <typename T>
CnnicOutput<T> cnnic_forward(const Tensor<T>& images, const CnnicModel<T>& model, Mode mode,
                             std::uint64_t seed = 0, std::uint64_t step = 0);

/// Value-level small-CNN forward for [N,C,p,p] patches.
template <typename T>
Tensor<T> small_cnn_forward(const Tensor<T>& patches, const SmallCnnWeights<T>& weights,
                            const CnnicConfig& config, Mode mode, DropoutKey key = {});

/// argmax per row; ties go to the lowest class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& probs);

}  // namespace cnnic
