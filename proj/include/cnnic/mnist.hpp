#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnnic/tensor.hpp"

namespace cnnic {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

/// Big-endian header (magic, N, rows, cols) followed by N*rows*cols bytes.
IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
/// Big-endian header (magic, N) followed by N label bytes in [0,9].
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels);

/// Reads a whole file, inflating it first if it starts with the gzip magic.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

enum class Split { Train, Test };

/// Images kept as raw bytes; tensors are produced on demand scaled by 1/255.
class Dataset {
 public:
  Dataset() = default;
  Dataset(IdxImages images, std::vector<int> labels, Split split);

  std::size_t size() const { return labels_.size(); }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Split split() const { return split_; }
  const std::vector<int>& labels() const { return labels_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  /// [indices.size(), 1, rows, cols] with values value/255.
  template <typename T>
  Tensor<T> images(std::span<const std::size_t> indices) const;
  template <typename T>
  Tensor<T> images_range(std::size_t first, std::size_t count) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;

  /// The first n items (all of them when n == 0 or n >= size()).
  Dataset head(std::size_t n) const;

  /// Items per class 0..9.
  std::vector<std::size_t> histogram() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
  Split split_ = Split::Train;
};

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Split split);

struct MnistFiles {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;

  /// Looks for the canonical names (with or without .gz) inside dir. A file
  /// that cannot be found keeps its canonical name, so the later open error
  /// names the expected path.
  static MnistFiles in_directory(const std::filesystem::path& dir);
};

/// Seeded permutation of 0..n-1 for (seed, epoch), cut into batches; the
/// final short batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

}  // namespace cnnic
