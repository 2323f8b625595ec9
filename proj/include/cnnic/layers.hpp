#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cnnic/tape.hpp"
#include "cnnic/tensor.hpp"

namespace cnnic {

enum class Mode { Train, Infer };

/// Identifies one dropout site at one optimizer step. Masks are a pure
/// function of the key, so replays and resumed runs draw the same masks.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
};

struct DropoutMask {
  double keep_prob = 1.0;
  std::vector<std::uint8_t> mask;  // 1 = kept
  DropoutKey key;
};

DropoutMask make_dropout_mask(std::size_t count, double p, DropoutKey key);

/// [B,C,H,W] * [K,C,kh,kw] + [K] -> [B,K,out_h,out_w], valid windows,
/// optionally followed by ReLU.
template <typename T>
Var conv2d_relu(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, bool apply_relu);

/// Non-overlapping 2x2 mean over the last two axes of [B,C,H,W]; H, W even.
template <typename T>
Var avg_pool_2x2(Tape<T>& tape, Var x);

/// [B,F] x [F,U] + [U] -> [B,U].
template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var relu(Tape<T>& tape, Var x);

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
/// Identity in infer mode or when p == 0.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, Mode mode, DropoutKey key);

template <typename T>
struct SoftmaxCrossEntropy {
  Var loss;         // scalar: batch mean of -ln p[label]
  Tensor<T> probs;  // [B,C]
};

template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(Tape<T>& tape, Var logits,
                                             std::span<const int> labels);

/// Row-wise softmax of [B,C].
template <typename T>
Var softmax(Tape<T>& tape, Var logits);

/// Batch mean of -ln probs[b, label_b] for already-normalised rows.
template <typename T>
Var nll_loss(Tape<T>& tape, Var probs, std::span<const int> labels);

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape);

/// Global average over ensemble members. Each part is [B*P, C] with rows
/// ordered (item, position); the result [B,C] is the mean over all parts
/// and positions.
template <typename T>
Var ensemble_mean(Tape<T>& tape, std::span<const Var> parts, std::size_t batch);

/// sum(x * weights) as a scalar; a probe loss for gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Tensor<T> weights);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace cnnic
