#include "cnnic/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "cnnic/gemm.hpp"
#include "cnnic/random.hpp"

namespace cnnic {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw std::invalid_argument("expected " + std::to_string(batch) + " labels, got " +
                                std::to_string(labels.size()));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("label " + std::to_string(label) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
}

}  // namespace

DropoutMask make_dropout_mask(std::size_t count, double p, DropoutKey key) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  DropoutMask out;
  out.keep_prob = 1.0 - p;
  out.key = key;
  out.mask.resize(count);
  const CounterRng rng = CounterRng(key.seed, 0x64726f70ull).split(key.layer).split(key.step);
  // Element i keeps iff uniform(i) >= p, i.e. bits(i) >= p * 2^32.
  const double threshold = p * 4294967296.0;
  for (std::size_t b = 0; 4 * b < count; ++b) {
    const auto words = rng.block(b);
    for (std::size_t j = 0; j < 4 && 4 * b + j < count; ++j) {
      out.mask[4 * b + j] = static_cast<double>(words[j]) >= threshold ? 1 : 0;
    }
  }
  return out;
}

template <typename T>
Var conv2d_relu(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, bool apply_relu) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  require(xv.rank() == 4, "conv2d: input must be [B,C,H,W], got " + to_string(xv.shape()));
  require(wv.rank() == 4, "conv2d: kernel must be [K,C,kh,kw], got " + to_string(wv.shape()));
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2),
                    width = xv.dim(3);
  const std::size_t filters = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == channels, "conv2d: channel mismatch, input " + to_string(xv.shape()) +
                                     " kernel " + to_string(wv.shape()));
  require(bv.rank() == 1 && bv.dim(0) == filters,
          "conv2d: bias " + to_string(bv.shape()) + " does not match kernel " +
              to_string(wv.shape()));
  const std::size_t out_h = conv_out_extent(height, kh, stride);
  const std::size_t out_w = conv_out_extent(width, kw, stride);
  const std::size_t positions = out_h * out_w;
  const std::size_t patch = channels * kh * kw;
  const std::size_t rows = batch * positions;

  std::shared_ptr<T[]> cols(std::make_unique_for_overwrite<T[]>(rows * patch));
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::im2col(xv.data().data() + n * channels * height * width, channels, height, width,
                    kh, kw, stride, cols.get() + n * positions * patch);
  }
  const auto yt = std::make_unique_for_overwrite<T[]>(rows * filters);
  kernels::gemm<T>(false, true, rows, filters, patch, cols.get(), patch, wv.data().data(),
                   patch, yt.get(), filters, false);

  Tensor<T> out(Shape{batch, filters, out_h, out_w});
  T* o = out.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t p = 0; p < positions; ++p) {
      const T* src = yt.get() + (n * positions + p) * filters;
      for (std::size_t k = 0; k < filters; ++k) {
        T v = src[k] + bv[k];
        if (apply_relu && !(v > T(0))) v = T(0);
        o[(n * filters + k) * positions + p] = v;
      }
    }
  }

  auto rule = [=](const BackwardContext<T>& ctx) {
    const Tensor<T>& g = ctx.grad;
    const Tensor<T>& y = ctx.output_value();
    const Tensor<T>& kernel = ctx.input(1);
    const auto gt = std::make_unique_for_overwrite<T[]>(rows * filters);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t k = 0; k < filters; ++k) {
        const std::size_t base = (n * filters + k) * positions;
        for (std::size_t p = 0; p < positions; ++p) {
          const T gv = (apply_relu && !(y[base + p] > T(0))) ? T(0) : g[base + p];
          gt[(n * positions + p) * filters + k] = gv;
        }
      }
    }
    std::vector<Tensor<T>> grads(3);
    if (ctx.needs[0]) {
      const auto dcols = std::make_unique_for_overwrite<T[]>(rows * patch);
      kernels::gemm<T>(false, false, rows, patch, filters, gt.get(), filters,
                       kernel.data().data(), patch, dcols.get(), patch, false);
      Tensor<T> dx(Shape{batch, channels, height, width});
      for (std::size_t n = 0; n < batch; ++n) {
        kernels::col2im_add(dcols.get() + n * positions * patch, channels, height, width, kh,
                            kw, stride, dx.data().data() + n * channels * height * width);
      }
      grads[0] = std::move(dx);
    }
    if (ctx.needs[1]) {
      Tensor<T> dw(kernel.shape());
      kernels::gemm<T>(true, false, filters, patch, rows, gt.get(), filters, cols.get(),
                       patch, dw.data().data(), patch, false);
      grads[1] = std::move(dw);
    }
    if (ctx.needs[2]) {
      Tensor<T> db(Shape{filters});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < filters; ++k) db[k] += gt[r * filters + k];
      }
      grads[2] = std::move(db);
    }
    return grads;
  };
  return tape.record(std::move(out), {x, w, b}, rule, apply_relu ? "conv2d_relu" : "conv2d");
}

template <typename T>
Var avg_pool_2x2(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 4, "avg_pool_2x2: input must be [B,C,H,W], got " + to_string(xv.shape()));
  const std::size_t planes = xv.dim(0) * xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  require(height % 2 == 0 && width % 2 == 0,
          "avg_pool_2x2: spatial extent must be even, got " + to_string(xv.shape()));
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor<T> out(Shape{xv.dim(0), xv.dim(1), oh, ow});
  for (std::size_t c = 0; c < planes; ++c) {
    const T* src = xv.data().data() + c * height * width;
    T* dst = out.data().data() + c * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const T* r0 = src + 2 * i * width;
      const T* r1 = r0 + width;
      for (std::size_t j = 0; j < ow; ++j) {
        dst[i * ow + j] = T(0.25) * ((r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1]));
      }
    }
  }
  auto rule = [=](const BackwardContext<T>& ctx) {
    Tensor<T> dx(ctx.input(0).shape());
    const T* g = ctx.grad.data().data();
    for (std::size_t c = 0; c < planes; ++c) {
      T* dst = dx.data().data() + c * height * width;
      for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          dst[i * width + j] = T(0.25) * g[c * oh * ow + (i / 2) * ow + j / 2];
        }
      }
    }
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dx));
    return grads;
  };
  return tape.record(std::move(out), {x}, rule, "avg_pool_2x2");
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0),
          "dense: incompatible shapes " + to_string(xv.shape()) + " and " + to_string(wv.shape()));
  const std::size_t batch = xv.dim(0), in = wv.dim(0), units = wv.dim(1);
  require(bv.rank() == 1 && bv.dim(0) == units,
          "dense: bias " + to_string(bv.shape()) + " does not match weight " +
              to_string(wv.shape()));
  Tensor<T> out(Shape{batch, units});
  kernels::gemm<T>(false, false, batch, units, in, xv.data().data(), in, wv.data().data(), units,
                   out.data().data(), units, false);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t u = 0; u < units; ++u) out[n * units + u] += bv[u];
  }
  auto rule = [=](const BackwardContext<T>& ctx) {
    const Tensor<T>& g = ctx.grad;
    std::vector<Tensor<T>> grads(3);
    if (ctx.needs[0]) {
      Tensor<T> dx(Shape{batch, in});
      kernels::gemm<T>(false, true, batch, in, units, g.data().data(), units,
                       ctx.input(1).data().data(), units, dx.data().data(), in, false);
      grads[0] = std::move(dx);
    }
    if (ctx.needs[1]) {
      Tensor<T> dw(Shape{in, units});
      kernels::gemm<T>(true, false, in, units, batch, ctx.input(0).data().data(), in,
                       g.data().data(), units, dw.data().data(), units, false);
      grads[1] = std::move(dw);
    }
    if (ctx.needs[2]) {
      grads[2] = reduce_sum(g, 0);
    }
    return grads;
  };
  return tape.record(std::move(out), {x, w, b}, rule, "dense");
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data()) {
    if (!(v > T(0))) v = T(0);
  }
  auto rule = [](const BackwardContext<T>& ctx) {
    Tensor<T> dx = ctx.grad;
    const Tensor<T>& y = ctx.output_value();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(y[i] > T(0))) dx[i] = T(0);
    }
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dx));
    return grads;
  };
  return tape.record(std::move(out), {x}, rule, "relu");
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, Mode mode, DropoutKey key) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  if (mode == Mode::Infer || p == 0.0) return x;

  const Tensor<T>& xv = tape.value(x);
  auto mask = std::make_shared<DropoutMask>(make_dropout_mask(xv.size(), p, key));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask->mask[i] ? xv[i] * keep_scale : T(0);
  }
  auto rule = [mask, keep_scale](const BackwardContext<T>& ctx) {
    Tensor<T> dx(ctx.grad.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] = mask->mask[i] ? ctx.grad[i] * keep_scale : T(0);
    }
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dx));
    return grads;
  };
  return tape.record(std::move(out), {x}, rule, "dropout");
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, "softmax: logits must be [B,C], got " + to_string(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> probs(logits.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* z = logits.data().data() + n * classes;
    T* p = probs.data().data() + n * classes;
    const T peak = *std::max_element(z, z + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - peak);
      total += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= total;
  }
  return probs;
}

template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(Tape<T>& tape, Var logits,
                                             std::span<const int> labels) {
  const Tensor<T>& z = tape.value(logits);
  require(z.rank() == 2, "softmax_cross_entropy: logits must be [B,C], got " +
                             to_string(z.shape()));
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  check_labels(labels, batch, classes);

  Tensor<T> probs(z.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* row = z.data().data() + n * classes;
    T* p = probs.data().data() + n * classes;
    const T peak = *std::max_element(row, row + classes);
    T denom = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(row[c] - peak);
      denom += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= denom;
    // -ln softmax = ln(sum exp(z - peak)) - (z_label - peak)
    total += std::log(static_cast<double>(denom)) - static_cast<double>(row[labels[n]] - peak);
  }
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch)));

  std::vector<int> kept(labels.begin(), labels.end());
  auto saved = std::make_shared<Tensor<T>>(probs);
  auto rule = [saved, kept, batch, classes](const BackwardContext<T>& ctx) {
    const T g = ctx.grad.item() / static_cast<T>(batch);
    Tensor<T> dz(*saved);
    for (std::size_t n = 0; n < batch; ++n) dz[n * classes + kept[n]] -= T(1);
    for (auto& v : dz.data()) v *= g;
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dz));
    return grads;
  };
  Var loss_var = tape.record(std::move(loss), {logits}, rule, "softmax_cross_entropy");
  return {loss_var, std::move(probs)};
}

template <typename T>
Var softmax(Tape<T>& tape, Var logits) {
  Tensor<T> probs = softmax_rows(tape.value(logits));
  auto rule = [](const BackwardContext<T>& ctx) {
    const Tensor<T>& p = ctx.output_value();
    const Tensor<T>& g = ctx.grad;
    const std::size_t batch = p.dim(0), classes = p.dim(1);
    Tensor<T> dz(p.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      T dot = 0;
      for (std::size_t c = 0; c < classes; ++c) dot += g[n * classes + c] * p[n * classes + c];
      for (std::size_t c = 0; c < classes; ++c) {
        dz[n * classes + c] = p[n * classes + c] * (g[n * classes + c] - dot);
      }
    }
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dz));
    return grads;
  };
  return tape.record(std::move(probs), {logits}, rule, "softmax");
}

template <typename T>
Var nll_loss(Tape<T>& tape, Var probs, std::span<const int> labels) {
  const Tensor<T>& p = tape.value(probs);
  require(p.rank() == 2, "nll_loss: probabilities must be [B,C], got " + to_string(p.shape()));
  const std::size_t batch = p.dim(0), classes = p.dim(1);
  check_labels(labels, batch, classes);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    total -= std::log(static_cast<double>(p[n * classes + labels[n]]));
  }
  std::vector<int> kept(labels.begin(), labels.end());
  auto rule = [kept, batch, classes](const BackwardContext<T>& ctx) {
    const Tensor<T>& pv = ctx.input(0);
    const T g = ctx.grad.item() / static_cast<T>(batch);
    Tensor<T> dp(pv.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      dp[n * classes + kept[n]] = -g / pv[n * classes + kept[n]];
    }
    std::vector<Tensor<T>> grads;
    grads.push_back(std::move(dp));
    return grads;
  };
  return tape.record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch))),
                     {probs}, rule, "nll_loss");
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  auto rule = [](const BackwardContext<T>& ctx) {
    std::vector<Tensor<T>> grads;
    grads.push_back(ctx.grad.reshaped(ctx.input(0).shape()));
    return grads;
  };
  return tape.record(std::move(out), {x}, rule, "reshape");
}

template <typename T>
Var ensemble_mean(Tape<T>& tape, std::span<const Var> parts, std::size_t batch) {
  if (parts.empty()) throw std::invalid_argument("ensemble_mean: no members");
  const Shape part_shape = tape.value(parts[0]).shape();
  require(part_shape.size() == 2 && batch > 0 && part_shape[0] % batch == 0,
          "ensemble_mean: member output " + to_string(part_shape) +
              " is not [B*P,C] for batch " + std::to_string(batch));
  for (Var v : parts) {
    require(tape.value(v).shape() == part_shape, "ensemble_mean: members differ in shape");
  }
  const std::size_t positions = part_shape[0] / batch, classes = part_shape[1];
  const T inv = T(1) / static_cast<T>(parts.size() * positions);

  Tensor<T> out(Shape{batch, classes});
  for (Var v : parts) {
    const Tensor<T>& z = tape.value(v);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t p = 0; p < positions; ++p) {
        const T* row = z.data().data() + (n * positions + p) * classes;
        for (std::size_t c = 0; c < classes; ++c) out[n * classes + c] += row[c];
      }
    }
  }
  for (auto& v : out.data()) v *= inv;

  auto rule = [part_shape, positions, classes, inv](const BackwardContext<T>& ctx) {
    Tensor<T> share(part_shape);
    const std::size_t items = part_shape[0] / positions;
    for (std::size_t n = 0; n < items; ++n) {
      for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t c = 0; c < classes; ++c) {
          share[(n * positions + p) * classes + c] = ctx.grad[n * classes + c] * inv;
        }
      }
    }
    return std::vector<Tensor<T>>(ctx.inputs.size(), share);
  };
  return tape.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()), rule,
                     "ensemble_mean");
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Tensor<T> weights) {
  const Tensor<T>& xv = tape.value(x);
  require(weights.shape() == xv.shape(), "weighted_sum: weights " + to_string(weights.shape()) +
                                             " vs input " + to_string(xv.shape()));
  T total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * weights[i];
  auto saved = std::make_shared<Tensor<T>>(std::move(weights));
  auto rule = [saved](const BackwardContext<T>& ctx) {
    std::vector<Tensor<T>> grads;
    grads.push_back(scale(*saved, ctx.grad.item()));
    return grads;
  };
  return tape.record(Tensor<T>::scalar(total), {x}, rule, "weighted_sum");
}

#define CNNIC_INSTANTIATE(T)                                                               \
  template Var conv2d_relu(Tape<T>&, Var, Var, Var, std::size_t, bool);                    \
  template Var avg_pool_2x2(Tape<T>&, Var);                                                \
  template Var dense(Tape<T>&, Var, Var, Var);                                             \
  template Var relu(Tape<T>&, Var);                                                        \
  template Var dropout(Tape<T>&, Var, double, Mode, DropoutKey);                           \
  template SoftmaxCrossEntropy<T> softmax_cross_entropy(Tape<T>&, Var, std::span<const int>); \
  template Var softmax(Tape<T>&, Var);                                                     \
  template Var nll_loss(Tape<T>&, Var, std::span<const int>);                              \
  template Var reshape(Tape<T>&, Var, Shape);                                              \
  template Var ensemble_mean(Tape<T>&, std::span<const Var>, std::size_t);                 \
  template Var weighted_sum(Tape<T>&, Var, Tensor<T>);                                     \
  template Tensor<T> softmax_rows(const Tensor<T>&);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
