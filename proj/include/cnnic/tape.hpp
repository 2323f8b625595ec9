#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnnic/tensor.hpp"

namespace cnnic {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
  std::uint64_t tape_id = 0;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape;
template <typename T>
class Gradients;
template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var loss);

/// What a recorded operation sees when its gradient rule runs.
template <typename T>
struct BackwardContext {
  const Tape<T>& tape;
  const std::vector<Var>& inputs;
  Var output;
  const Tensor<T>& grad;           // dLoss/dOutput
  const std::vector<bool>& needs;  // which inputs want a gradient

  const Tensor<T>& input(std::size_t i) const { return tape.value(inputs[i]); }
  const Tensor<T>& output_value() const { return tape.value(output); }
};

/// Returns one gradient per input; entries for inputs with needs[i] == false
/// are ignored and may be left default-constructed.
template <typename T>
using BackwardFn = std::function<std::vector<Tensor<T>>(const BackwardContext<T>&)>;

/// Reverse-mode record. Values are appended in evaluation order, so the
/// index order is a topological order of the graph.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// A leaf that receives a gradient from backward().
  Var parameter(Tensor<T> value, std::string name = {});
  /// A leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  /// Appends the result of an operation on already-recorded inputs.
  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward, std::string op);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  const std::string& name(Var v) const;
  bool contains(Var v) const;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  const std::vector<Var>& parameters() const { return parameters_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Var> inputs;
    BackwardFn<T> backward;
    std::string name;
    bool requires_grad = false;
    bool is_parameter = false;
  };

  const Node& node(Var v) const;

  template <typename U>
  friend Gradients<U> backward(const Tape<U>& tape, Var loss);

  std::uint64_t id_;
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<Var> parameters_;
};

/// Gradients of a scalar loss with respect to every parameter on a tape.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& operator[](Var parameter) const;
  const std::vector<Var>& parameters() const { return parameters_; }

 private:
  template <typename U>
  friend Gradients<U> backward(const Tape<U>& tape, Var loss);

  std::uint64_t tape_id_ = 0;
  std::vector<Var> parameters_;
  std::vector<Tensor<T>> grads_;  // parallel to parameters_
};

/// Reverse traversal from a scalar loss. Parameters the loss does not depend
/// on get zero gradients.
template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var loss);

}  // namespace cnnic
