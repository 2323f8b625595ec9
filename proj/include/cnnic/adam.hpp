#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cnnic/tensor.hpp"

namespace cnnic {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_rate = 0.95;
  std::uint64_t decay_every = 1000;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// Fresh state with zero moments shaped like `params`.
template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>* const> params, AdamOptions options);

/// base_lr * decay_rate^floor(t / decay_every)
double lr_schedule(const AdamOptions& options, std::uint64_t t);

template <typename T>
double lr_schedule(const AdamState<T>& state) {
  return lr_schedule(state.options, state.t);
}

/// One bias-corrected Adam update at learning rate lr_schedule(state) (the
/// rate for the step being taken); t is incremented. Gradients are checked
/// for finiteness before anything is modified.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state);

}  // namespace cnnic
