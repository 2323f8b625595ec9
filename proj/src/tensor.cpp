#include "cnnic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cnnic/gemm.hpp"

namespace cnnic {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t conv_out_extent(std::size_t input, std::size_t kernel, std::size_t stride) {
  if (stride == 0) throw DimensionError("stride must be positive");
  if (kernel == 0 || kernel > input) {
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds input extent " +
                         std::to_string(input));
  }
  return (input - kernel) / stride + 1;
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("zero extent in shape " + to_string(shape));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(element_count(shape_), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill_value) : Tensor(std::move(shape)) {
  fill(fill_value);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::vector<std::size_t> Tensor<T>::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t k = shape_.size(); k-- > 1;) s[k - 1] = s[k] * shape_[k];
  return s;
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " +
                         to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t k = 0;
  for (std::size_t i : index) {
    if (i >= shape_[k]) throw DimensionError("index out of range for shape " + to_string(shape_));
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(*this).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (element_count(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a);
  add_inplace(out, b);
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a);
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& b) {
  require_same_shape(acc, b, "add_inplace");
  auto dst = acc.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return s;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  kernels::gemm<T>(false, false, m, n, k, a.data().data(), k, b.data().data(), n,
                   out.data().data(), n, false);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2, got " + to_string(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out(Shape{cols, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  }
  return out;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("reduce axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  const std::size_t len = shape[axis];

  Shape out_shape;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k != axis) out_shape.push_back(shape[k]);
  }
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const T* src = x.data().data() + (o * len + l) * inner;
      T* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis) {
  Tensor<T> out = reduce_sum(x, axis);
  const T inv = T(1) / static_cast<T>(x.dim(axis));
  for (auto& v : out.data()) v *= inv;
  return out;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t stride) {
  if (x.rank() != 3) throw DimensionError("im2col expects [C,H,W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t out_h = conv_out_extent(h, kh, stride);
  const std::size_t out_w = conv_out_extent(w, kw, stride);
  Tensor<T> cols(Shape{out_h * out_w, c * kh * kw});
  kernels::im2col(x.data().data(), c, h, w, kh, kw, stride, cols.data().data());
  return cols;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, std::size_t channels, std::size_t height,
                 std::size_t width, std::size_t kh, std::size_t kw, std::size_t stride) {
  const std::size_t out_h = conv_out_extent(height, kh, stride);
  const std::size_t out_w = conv_out_extent(width, kw, stride);
  if (cols.rank() != 2 || cols.dim(0) != out_h * out_w || cols.dim(1) != channels * kh * kw) {
    throw DimensionError("col2im: column matrix " + to_string(cols.shape()) +
                         " does not match geometry");
  }
  Tensor<T> x(Shape{channels, height, width});
  kernels::col2im_add(cols.data().data(), channels, height, width, kh, kw, stride,
                      x.data().data());
  return x;
}

#define CNNIC_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                                     \
  template T sum(const Tensor<T>&);                                                            \
  template T max_abs(const Tensor<T>&);                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reduce_sum(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> reduce_mean(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> im2col(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> col2im(const Tensor<T>&, std::size_t, std::size_t, std::size_t,           \
                            std::size_t, std::size_t, std::size_t);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
