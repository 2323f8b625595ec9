#include "cnnic/adam.hpp"

#include <cmath>
#include <string>

namespace cnnic {

double lr_schedule(const AdamOptions& options, std::uint64_t t) {
  if (options.decay_every == 0) return options.base_lr;
  const double periods = static_cast<double>(t / options.decay_every);
  return options.base_lr * std::pow(options.decay_rate, periods);
}

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>* const> params, AdamOptions options) {
  AdamState<T> state;
  state.options = options;
  for (const Tensor<T>* p : params) {
    state.m.emplace_back(p->shape());
    state.v.emplace_back(p->shape());
  }
  return state;
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " +
                         std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           to_string(params[i]->shape()) + " but gradient " +
                           to_string(grads[i].shape()));
    }
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i][j])) {
        throw NonFiniteError("non-finite gradient in parameter " + std::to_string(i) +
                             " at element " + std::to_string(j) + " (step " +
                             std::to_string(state.t + 1) + ")");
      }
    }
  }

  const AdamOptions& o = state.options;
  const double lr = lr_schedule(o, state.t);
  state.t += 1;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T one_b1 = static_cast<T>(1.0 - o.beta1), one_b2 = static_cast<T>(1.0 - o.beta2);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  const T step = static_cast<T>(lr), eps = static_cast<T>(o.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data().data();
    T* m = state.m[i].data().data();
    T* v = state.v[i].data().data();
    const T* g = grads[i].data().data();
    const std::size_t n = grads[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + one_b1 * g[j];
      v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
      const T m_hat = m[j] * inv_c1;
      const T v_hat = v[j] * inv_c2;
      p[j] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template AdamState<float> make_adam_state(std::span<const Tensor<float>* const>, AdamOptions);
template AdamState<double> make_adam_state(std::span<const Tensor<double>* const>, AdamOptions);
template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                        AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                        AdamState<double>&);

}  // namespace cnnic
