#pragma once

#include <cstdint>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/tensor.hpp"

namespace cnnic {

/// Orthonormal initialization with gain 1. The tensor is viewed as a matrix
/// [shape[0], product of the remaining extents]; a standard-normal draw is
/// orthonormalized along its smaller dimension (rows when rows <= cols,
/// otherwise columns) and reshaped back. Requires rank >= 2.
template <typename T>
Tensor<T> orthonormal_init(const Shape& shape, std::uint64_t seed);

/// Weight tensors get orthonormal_init (one stream per tensor), biases zero.
template <typename T>
CnnicModel<T> initialize_model(const CnnicConfig& config, std::uint64_t seed);

}  // namespace cnnic
