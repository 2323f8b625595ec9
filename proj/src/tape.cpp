#include "cnnic/tape.hpp"

#include <atomic>

namespace cnnic {
namespace {

std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

template <typename T>
Tape<T>::Tape(bool grad_enabled) : id_(next_tape_id()), grad_enabled_(grad_enabled) {}

template <typename T>
Var Tape<T>::parameter(Tensor<T> value, std::string name) {
  Var v{nodes_.size(), id_};
  nodes_.push_back(Node{std::move(value), {}, {}, std::move(name), grad_enabled_, true});
  parameters_.push_back(v);
  return v;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Var v{nodes_.size(), id_};
  nodes_.push_back(Node{std::move(value), {}, {}, "constant", false, false});
  return v;
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward,
                    std::string op) {
  bool needs_grad = false;
  for (Var in : inputs) {
    node(in);  // validates ownership and ordering
    needs_grad = needs_grad || nodes_[in.index].requires_grad;
  }
  needs_grad = needs_grad && grad_enabled_;
  Var v{nodes_.size(), id_};
  nodes_.push_back(Node{std::move(value), std::move(inputs),
                        needs_grad ? std::move(backward) : BackwardFn<T>{}, std::move(op),
                        needs_grad, false});
  return v;
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (!contains(v)) throw GraphError("value is not recorded on this tape");
  return nodes_[v.index];
}

template <typename T>
bool Tape<T>::contains(Var v) const {
  return v.tape_id == id_ && v.index < nodes_.size();
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
const std::string& Tape<T>::name(Var v) const {
  return node(v).name;
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](Var parameter) const {
  if (parameter.tape_id != tape_id_) throw GraphError("parameter belongs to a different tape");
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    if (parameters_[i].index == parameter.index) return grads_[i];
  }
  throw GraphError("value is not a parameter of this tape");
}

template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var loss) {
  if (!tape.contains(loss)) throw GraphError("loss is not recorded on this tape");
  const Tensor<T>& loss_value = tape.value(loss);
  if (loss_value.size() != 1) {
    throw GraphError("loss must be scalar, got shape " + to_string(loss_value.shape()));
  }

  std::vector<std::optional<Tensor<T>>> grads(loss.index + 1);
  grads[loss.index] = Tensor<T>(loss_value.shape(), T(1));

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const auto& node = tape.nodes_[i];
    if (!node.backward) continue;

    std::vector<bool> needs(node.inputs.size());
    bool any = false;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      needs[k] = tape.nodes_[node.inputs[k].index].requires_grad;
      any = any || needs[k];
    }
    if (any) {
      const BackwardContext<T> ctx{tape, node.inputs, Var{i, tape.id()}, *grads[i], needs};
      std::vector<Tensor<T>> input_grads = node.backward(ctx);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!needs[k]) continue;
        const std::size_t target = node.inputs[k].index;
        Tensor<T>& g = input_grads[k];
        if (g.shape() != tape.nodes_[target].value.shape()) {
          throw GraphError("gradient rule of '" + node.name + "' returned shape " +
                           to_string(g.shape()) + " for input of shape " +
                           to_string(tape.nodes_[target].value.shape()));
        }
        if (grads[target]) {
          add_inplace(*grads[target], g);
        } else {
          grads[target] = std::move(g);
        }
      }
    }
    if (!node.is_parameter) grads[i].reset();
  }

  Gradients<T> out;
  out.tape_id_ = tape.id();
  out.parameters_ = tape.parameters();
  out.grads_.reserve(out.parameters_.size());
  for (Var p : out.parameters_) {
    if (p.index < grads.size() && grads[p.index]) {
      out.grads_.push_back(std::move(*grads[p.index]));
    } else {
      out.grads_.emplace_back(tape.value(p).shape());
    }
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward(const Tape<float>&, Var);
template Gradients<double> backward(const Tape<double>&, Var);

}  // namespace cnnic
