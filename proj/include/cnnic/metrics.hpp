#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cnnic/tensor.hpp"

namespace cnnic {

struct EvalReport {
  std::size_t error_count = 0;
  std::size_t sample_count = 0;
  double error_rate = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  /// Adds another report's counts (same class count) and recomputes the rate.
  void merge(const EvalReport& other);
};

/// Prediction is the row argmax, ties to the lowest class index.
template <typename T>
EvalReport error_rate(const Tensor<T>& probs, std::span<const int> labels);

EvalReport error_rate_from_predictions(std::span<const int> predictions,
                                       std::span<const int> labels, std::size_t num_classes);

/// E_train/N_train - E_test/N_test, with the sign exactly as published.
double overfitting_index(std::size_t train_errors, std::size_t train_count,
                         std::size_t test_errors, std::size_t test_count);

/// Quadratic-loss ensemble decomposition with a uniformly averaged ensemble.
/// Errors are squared Euclidean distances per sample, averaged over the batch.
struct AmbiguityReport {
  double ensemble_error = 0.0;     // E
  double mean_member_error = 0.0;  // E_bar
  double mean_ambiguity = 0.0;     // A_bar
  std::size_t members = 0;
  std::size_t samples = 0;
};

template <typename T>
AmbiguityReport ambiguity_decomposition(std::span<const Tensor<T>> members,
                                        const Tensor<T>& targets);

/// Splits a [B,K,P,C] logit map into K*P members, each the row softmax [B,C]
/// of one kernel at one patch position (kernel-major order).
template <typename T>
std::vector<Tensor<T>> members_from_logit_map(const Tensor<T>& logit_map);

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t num_classes);

std::string to_json(const EvalReport& report);

}  // namespace cnnic
