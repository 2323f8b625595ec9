#include "cnnic/mnist.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cnnic/random.hpp"

namespace cnnic {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
  return s;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& name) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("zlib init failed for " + name);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream in " + name);
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream in " + name);
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("IDX image file truncated: header needs 16 bytes");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw FormatError("wrong magic " + hex32(magic) + " for IDX images (expected " +
                      hex32(kIdxImageMagic) + ")");
  }
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::size_t payload = out.count * out.rows * out.cols;
  if (bytes.size() - 16 < payload) {
    throw FormatError("IDX image payload truncated: header declares " + std::to_string(payload) +
                      " bytes, found " + std::to_string(bytes.size() - 16));
  }
  if (bytes.size() - 16 != payload) {
    throw FormatError("IDX image header declares " + std::to_string(payload) +
                      " payload bytes but file holds " + std::to_string(bytes.size() - 16));
  }
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("IDX label file truncated: header needs 8 bytes");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    throw FormatError("wrong magic " + hex32(magic) + " for IDX labels (expected " +
                      hex32(kIdxLabelMagic) + ")");
  }
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw FormatError("IDX label payload truncated: header declares " + std::to_string(count) +
                      " labels, found " + std::to_string(bytes.size() - 8));
  }
  if (bytes.size() - 8 != count) {
    throw FormatError("IDX label header declares " + std::to_string(count) +
                      " labels but file holds " + std::to_string(bytes.size() - 8));
  }
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = bytes[8 + i];
    if (label > 9) {
      throw FormatError("label " + std::to_string(label) + " at index " + std::to_string(i) +
                        " outside [0,9]");
    }
    labels[i] = label;
  }
  return labels;
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  if (images.pixels.size() != images.count * images.rows * images.cols) {
    throw FormatError("pixel buffer does not match image dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int label : labels) {
    if (label < 0 || label > 9) throw FormatError("label " + std::to_string(label) + " outside [0,9]");
    out.push_back(static_cast<std::uint8_t>(label));
  }
  return out;
}

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    return gunzip(bytes, path.string());
  }
  return bytes;
}

Dataset::Dataset(IdxImages images, std::vector<int> labels, Split split)
    : rows_(images.rows), cols_(images.cols), pixels_(std::move(images.pixels)),
      labels_(std::move(labels)), split_(split) {
  if (images.count != labels_.size()) {
    throw FormatError("image count " + std::to_string(images.count) + " differs from label count " +
                      std::to_string(labels_.size()));
  }
}

template <typename T>
Tensor<T> Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t plane = rows_ * cols_;
  Tensor<T> out(Shape{indices.size(), 1, rows_, cols_});
  T* dst = out.data().data();
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("image index " + std::to_string(i) + " out of range");
    const std::uint8_t* src = pixels_.data() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) *dst++ = static_cast<T>(src[k]) / T(255);
  }
  return out;
}

template <typename T>
Tensor<T> Dataset::images_range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), first);
  return images<T>(idx);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels_.at(i));
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  Dataset out;
  out.rows_ = rows_;
  out.cols_ = cols_;
  out.split_ = split_;
  out.pixels_.assign(pixels_.begin(), pixels_.begin() + n * rows_ * cols_);
  out.labels_.assign(labels_.begin(), labels_.begin() + n);
  return out;
}

std::vector<std::size_t> Dataset::histogram() const {
  std::vector<std::size_t> counts(10, 0);
  for (int label : labels_) ++counts.at(label);
  return counts;
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Split split) {
  if (!std::filesystem::exists(images)) throw FormatError("missing data file: " + images.string());
  if (!std::filesystem::exists(labels)) throw FormatError("missing data file: " + labels.string());
  return Dataset(parse_idx_images(read_maybe_gzip(images)), parse_idx_labels(read_maybe_gzip(labels)),
                 split);
}

MnistFiles MnistFiles::in_directory(const std::filesystem::path& dir) {
  auto pick = [&](const std::string& stem) {
    const std::string dotted = std::string(stem).replace(stem.rfind('-'), 1, ".");
    for (const std::string& name : {stem, stem + ".gz", dotted, dotted + ".gz"}) {
      if (std::filesystem::exists(dir / name)) return dir / name;
    }
    return dir / stem;
  };
  return {pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"),
          pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte")};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng = CounterRng(seed, 0x62617463ull).split(epoch);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_below(i)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

template Tensor<float> Dataset::images<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::images<double>(std::span<const std::size_t>) const;
template Tensor<float> Dataset::images_range<float>(std::size_t, std::size_t) const;
template Tensor<double> Dataset::images_range<double>(std::size_t, std::size_t) const;

}  // namespace cnnic
