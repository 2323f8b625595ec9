#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnnic {

using Shape = std::vector<std::size_t>;

/// Thrown when tensor extents are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major n-dimensional array. A rank-0 tensor holds one element.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);
  Tensor(Shape shape, T fill);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Multi-index access with bounds checking.
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  /// Row-major strides: stride[k] = product of extents k+1..r-1.
  std::vector<std::size_t> strides() const;

  /// Same data, new extents; the element count must not change.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  T item() const;

  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

// Elementwise helpers. Shapes must match exactly; no broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> void add_inplace(Tensor<T>& acc, const Tensor<T>& b);
template <typename T> T sum(const Tensor<T>& a);
template <typename T> T max_abs(const Tensor<T>& a);

/// Matrix product of [m,k] and [k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Transpose of a rank-2 tensor.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

/// Mean along one axis; the axis is removed from the shape.
template <typename T> Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis);

/// Sum along one axis; the axis is removed from the shape.
template <typename T> Tensor<T> reduce_sum(const Tensor<T>& x, std::size_t axis);

/// Lowers a [C,H,W] image to [out_h*out_w, C*kh*kw]. Row r is the receptive
/// field of output position r (row-major over positions); within a row the
/// order is channel, then kernel row, then kernel column. Valid windows only.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t stride);

/// Adjoint of im2col: scatter-adds rows back onto a [C,H,W] image.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, std::size_t channels, std::size_t height,
                 std::size_t width, std::size_t kh, std::size_t kw, std::size_t stride);

/// Number of valid window positions along one axis.
std::size_t conv_out_extent(std::size_t input, std::size_t kernel, std::size_t stride);

}  // namespace cnnic
