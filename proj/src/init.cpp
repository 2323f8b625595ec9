#include "cnnic/init.hpp"

#include <cmath>
#include <vector>

#include "cnnic/random.hpp"

namespace cnnic {
namespace {

// Modified Gram-Schmidt over `count` vectors of length `len`, stored
// contiguously. Two passes keep the result orthonormal to rounding.
void orthonormalize(std::vector<double>& v, std::size_t count, std::size_t len) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < count; ++i) {
      double* vi = v.data() + i * len;
      for (std::size_t j = 0; j < i; ++j) {
        const double* vj = v.data() + j * len;
        double dot = 0;
        for (std::size_t t = 0; t < len; ++t) dot += vi[t] * vj[t];
        for (std::size_t t = 0; t < len; ++t) vi[t] -= dot * vj[t];
      }
      double norm = 0;
      for (std::size_t t = 0; t < len; ++t) norm += vi[t] * vi[t];
      norm = std::sqrt(norm);
      if (norm == 0.0) throw std::runtime_error("orthonormal_init: degenerate normal draw");
      for (std::size_t t = 0; t < len; ++t) vi[t] /= norm;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> orthonormal_init(const Shape& shape, std::uint64_t seed) {
  if (shape.size() < 2) {
    throw DimensionError("orthonormal_init needs rank >= 2, got " + to_string(shape));
  }
  const std::size_t rows = shape[0];
  const std::size_t cols = element_count(shape) / rows;
  const bool by_rows = rows <= cols;
  const std::size_t count = by_rows ? rows : cols;
  const std::size_t len = by_rows ? cols : rows;

  CounterRng rng(seed, 0x6f7274686full);
  std::vector<double> vecs(count * len);
  for (double& x : vecs) x = rng.next_normal();
  orthonormalize(vecs, count, len);

  Tensor<T> out(shape);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t r = by_rows ? i : t;
      const std::size_t c = by_rows ? t : i;
      out[r * cols + c] = static_cast<T>(vecs[i * len + t]);
    }
  }
  return out;
}

template <typename T>
CnnicModel<T> initialize_model(const CnnicConfig& config, std::uint64_t seed) {
  CnnicModel<T> model = zero_model<T>(config);
  std::uint64_t stream = 0;
  for (auto& kernel : model.kernels) {
    for (auto& tensor : kernel.tensors) {
      const std::uint64_t tensor_seed = mix64(seed ^ mix64(++stream));
      if (tensor.rank() >= 2) tensor = orthonormal_init<T>(tensor.shape(), tensor_seed);
    }
  }
  return model;
}

template Tensor<float> orthonormal_init<float>(const Shape&, std::uint64_t);
template Tensor<double> orthonormal_init<double>(const Shape&, std::uint64_t);
template CnnicModel<float> initialize_model<float>(const CnnicConfig&, std::uint64_t);
template CnnicModel<double> initialize_model<double>(const CnnicConfig&, std::uint64_t);

}  // namespace cnnic
