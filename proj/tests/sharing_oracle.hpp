#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/layers.hpp"
#include "cnnic/tape.hpp"
#include "support.hpp"

namespace cnnic::testing {

// Uniform random weights in [-scale, scale], one mt19937 seed per tensor.
inline CnnicModel<double> random_model(const CnnicConfig& config, unsigned seed, double scale = 0.2) {
  CnnicModel<double> m = zero_model<double>(config);
  for (auto& [name, t] : m.named_parameters()) {
    *t = random_tensor(t->shape(), seed++, -scale, scale);
  }
  return m;
}

inline Tensor<double> naive_slice(const Tensor<double>& images, std::size_t n, std::size_t top,
                           std::size_t left, std::size_t p) {
  Tensor<double> out({1, p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) out.at({0, i, j}) = images.at({n, 0, top + i, left + j});
  return out;
}

// ---- weight sharing ------------------------------------------------------

struct SharingResult {
  double loss;
  Tensor<double> probs;
  std::vector<Tensor<double>> grads;  // per kernel parameter tensor
};

inline CnnicConfig sharing_config() {
  CnnicConfig c;
  c.image_size = 8;
  c.patch_size = 6;
  c.patch_stride = 2;
  c.preset = Preset::Tiny;
  c.dropout_p = 0.0;
  return c;
}

inline SharingResult shared_run(const CnnicModel<double>& model, const Tensor<double>& images,
                         const std::vector<int>& labels) {
  Tape<double> tape;
  std::vector<std::vector<Var>> params(1);
  for (const auto& t : model.kernels[0].tensors) params[0].push_back(tape.parameter(t));
  const auto graph = record_cnnic(tape, images, std::span<const std::vector<Var>>(params),
                                  model.config, Mode::Train, 1, 0);
  const auto loss = cnnic_loss(tape, graph, labels);
  const auto g = backward(tape, loss.loss);
  SharingResult r{tape.value(loss.loss).item(), loss.probs, {}};
  for (Var v : params[0]) r.grads.push_back(g[v]);
  return r;
}

inline Var add_vars(Tape<double>& tape, Var a, Var b) {
  return tape.record(add(tape.value(a), tape.value(b)), {a, b},
                     [](const BackwardContext<double>& ctx) {
                       return std::vector<Tensor<double>>{ctx.grad, ctx.grad};
                     },
                     "test_add");
}

inline Var scale_var(Tape<double>& tape, Var a, double factor) {
  return tape.record(scale(tape.value(a), factor), {a},
                     [factor](const BackwardContext<double>& ctx) {
                       return std::vector<Tensor<double>>{scale(ctx.grad, factor)};
                     },
                     "test_scale");
}

// Each grid position gets its own materialized copy of the kernel weights;
// the shared gradient must equal the sum of the per-copy gradients.
inline SharingResult copy_oracle(const CnnicModel<double>& model, const Tensor<double>& images,
                          const std::vector<int>& labels) {
  const CnnicConfig& c = model.config;
  const std::size_t g = c.grid_side(), P = g * g, B = images.dim(0), p = c.patch_size;
  Tape<double> tape;
  std::vector<std::vector<Var>> copies(P);
  Var total;
  for (std::size_t pos = 0; pos < P; ++pos) {
    for (const auto& t : model.kernels[0].tensors) copies[pos].push_back(tape.parameter(t));
    Tensor<double> batch({B, 1, p, p});
    for (std::size_t n = 0; n < B; ++n) {
      const auto patch = naive_slice(images, n, (pos / g) * c.patch_stride,
                                     (pos % g) * c.patch_stride, p);
      std::copy_n(patch.data().data(), p * p, batch.data().data() + n * p * p);
    }
    const Var z = small_cnn_forward(tape, tape.constant(batch),
                                    std::span<const Var>(copies[pos]), c, Mode::Train, {});
    total = pos == 0 ? z : add_vars(tape, total, z);
  }
  const Var mean = scale_var(tape, total, 1.0 / static_cast<double>(P));
  const auto ce = softmax_cross_entropy(tape, mean, labels);
  const auto grads = backward(tape, ce.loss);
  SharingResult r{tape.value(ce.loss).item(), ce.probs, {}};
  for (std::size_t i = 0; i < copies[0].size(); ++i) {
    Tensor<double> sum_over_copies(model.kernels[0].tensors[i].shape());
    for (std::size_t pos = 0; pos < P; ++pos) add_inplace(sum_over_copies, grads[copies[pos][i]]);
    r.grads.push_back(sum_over_copies);
  }
  return r;
}
}  // namespace cnnic::testing
