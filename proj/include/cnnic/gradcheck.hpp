#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/tape.hpp"
#include "cnnic/tensor.hpp"

namespace cnnic {

struct GradcheckOptions {
  double step = 1e-3;        // central difference half-width
  double tolerance = 1e-4;   // max relative error
  double floor = 1e-6;       // denominator floor for near-zero gradients
  std::size_t max_coords = 0;  // per tensor; 0 = every coordinate
  std::uint64_t seed = 0;      // coordinate sampling
  /// Skip coordinates whose +-step probe flips any ReLU on or off: across a
  /// kink the central difference is not an estimate of the derivative. A
  /// replacement coordinate is drawn, up to 16 * max_coords attempts.
  bool skip_kinks = false;
};

struct ParamCheck {
  std::string name;
  Shape shape;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // kink-crossing coordinates
  double worst_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::string label;
  std::vector<ParamCheck> params;
  double worst_error = 0.0;
  bool passed = true;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;
/// Builds a scalar loss from parameter vars, in the order of the NamedTensors.
using LossBuilder = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares backward() against central differences of the loss for every
/// (or a sampled subset of every) parameter coordinate.
GradcheckReport check_gradients(std::string label, const NamedTensors& params,
                                const LossBuilder& loss, const GradcheckOptions& options = {});

/// Each layer in isolation on small random inputs, inputs treated as
/// parameters, with a random weighted-sum probe loss where needed.
std::vector<GradcheckReport> check_layers(std::uint64_t seed, const GradcheckOptions& options = {});

/// The whole network on a random `batch`-image batch with dropout active,
/// against softmax cross-entropy. Every parameter tensor appears once.
GradcheckReport check_composite(const CnnicConfig& config, std::uint64_t seed,
                                std::size_t batch = 2, const GradcheckOptions& options = {});

}  // namespace cnnic
