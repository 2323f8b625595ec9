#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cnnic/tensor.hpp"

namespace cnnic::testing {

// Test inputs come from std::mt19937 so they never share code with the
// generator under test.
template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(gen));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return 1e300;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

// Naive [m,k] x [k,n].
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Direct valid convolution of one [C,H,W] image with [K,C,kh,kw] kernels.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                                 const Tensor<double>& b, std::size_t stride, bool relu) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (H - kh) / stride + 1, ow = (W - kw) / stride + 1;
  Tensor<double> out({K, oh, ow});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = b[k];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v)
              s += w.at({k, c, u, v}) * x.at({c, i * stride + u, j * stride + v});
        out.at({k, i, j}) = relu ? std::max(s, 0.0) : s;
      }
  return out;
}

/// MNIST directory from the environment, if all four files are present.
inline std::optional<std::filesystem::path> mnist_dir() {
  const char* env = std::getenv("CNNIC_DATA_DIR");
  if (!env || !*env) return std::nullopt;
  const std::filesystem::path dir(env);
  for (const char* stem : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    if (!std::filesystem::exists(dir / stem) &&
        !std::filesystem::exists(dir / (std::string(stem) + ".gz"))) {
      return std::nullopt;
    }
  }
  return dir;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cnnic_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cnnic::testing
