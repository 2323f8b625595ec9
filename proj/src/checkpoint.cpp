#include "cnnic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "cnnic/mnist.hpp"

namespace cnnic {
namespace {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? kDtypeF32 : kDtypeF64;
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void string(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void tensor(const std::string& name, const Tensor<T>& t) {
    string(name);
    le<std::uint8_t>(dtype_code<T>());
    le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) le<std::uint64_t>(e);
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T v : t.data()) le<Bits>(std::bit_cast<Bits>(v));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string string() { return string(le<std::uint32_t>()); }

  struct Named {
    std::string name;
    std::uint8_t dtype;
    Shape shape;
    std::size_t data_offset;
  };
  Named tensor_header() {
    Named n;
    n.name = string();
    n.dtype = le<std::uint8_t>();
    if (n.dtype != kDtypeF32 && n.dtype != kDtypeF64) {
      throw FormatError("tensor '" + n.name + "' has unknown dtype " + std::to_string(n.dtype));
    }
    const std::uint32_t rank = le<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) n.shape.push_back(le<std::uint64_t>());
    n.data_offset = pos_;
    const std::size_t width = n.dtype == kDtypeF32 ? 4 : 8;
    need(element_count(n.shape) * width);
    pos_ += element_count(n.shape) * width;
    return n;
  }
  template <typename T>
  Tensor<T> tensor_data(const Named& n) const {
    std::vector<T> data(element_count(n.shape));
    const std::uint8_t* p = in_.data() + n.data_offset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (n.dtype == kDtypeF32) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[4 * i + b]} << (8 * b);
        data[i] = static_cast<T>(std::bit_cast<float>(bits));
      } else {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[8 * i + b]} << (8 * b);
        data[i] = static_cast<T>(std::bit_cast<double>(bits));
      }
    }
    return Tensor<T>(n.shape, std::move(data));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

KeyValues read_header(Reader& r) {
  const std::string magic = r.string(8);
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("not a CNNIC checkpoint (bad magic)");
  }
  const std::uint32_t version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t text_len = r.le<std::uint64_t>();
  return parse_key_values(r.string(text_len), "checkpoint");
}

std::uint64_t take_uint(KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint lacks key '" + key + "'");
  const std::uint64_t v = std::stoull(it->second);
  kv.erase(it);
  return v;
}

double take_real(KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint lacks key '" + key + "'");
  const double v = parse_real(it->second, key);
  kv.erase(it);
  return v;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& c) {
  KeyValues kv = c.config.snapshot_key_values();
  kv["state.step"] = std::to_string(c.progress.step);
  kv["state.epoch"] = std::to_string(c.progress.epoch);
  kv["state.batch_in_epoch"] = std::to_string(c.progress.batch_in_epoch);
  kv["state.adam_t"] = std::to_string(c.adam.t);
  kv["state.last_loss"] = format_real(c.progress.last_loss);
  kv["state.last_train_acc"] = format_real(c.progress.last_train_acc);
  kv["state.last_test_acc"] = format_real(c.progress.last_test_acc);
  const std::string text = format_key_values(kv);

  const auto params = c.model.named_parameters();
  if (c.adam.m.size() != params.size() || c.adam.v.size() != params.size()) {
    throw std::invalid_argument("checkpoint: Adam state does not match the model");
  }
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(3 * params.size()));
  for (const auto& [name, tensor] : params) w.tensor(name, *tensor);
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.m." + params[i].first, c.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.v." + params[i].first, c.adam.v[i]);
  return w.take();
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  KeyValues kv = read_header(r);

  Checkpoint<T> c;
  c.progress.step = take_uint(kv, "state.step");
  c.progress.epoch = take_uint(kv, "state.epoch");
  c.progress.batch_in_epoch = take_uint(kv, "state.batch_in_epoch");
  const std::uint64_t adam_t = take_uint(kv, "state.adam_t");
  c.progress.last_loss = take_real(kv, "state.last_loss");
  c.progress.last_train_acc = take_real(kv, "state.last_train_acc");
  c.progress.last_test_acc = take_real(kv, "state.last_test_acc");
  c.config = apply_key_values(RunConfig{}, kv);
  c.config.validate();
  c.model = zero_model<T>(c.config.net);

  auto params = c.model.named_parameters();
  const std::uint32_t count = r.le<std::uint32_t>();
  if (count != 3 * params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                      std::to_string(3 * params.size()));
  }
  auto expect = [&](const Reader::Named& n, const std::string& name, const Shape& shape) {
    if (n.name != name) throw FormatError("expected tensor '" + name + "', found '" + n.name + "'");
    if (n.shape != shape) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(n.shape) + ", expected " +
                        to_string(shape));
    }
  };
  for (auto& [name, tensor] : params) {
    const auto n = r.tensor_header();
    expect(n, name, tensor->shape());
    *tensor = r.tensor_data<T>(n);
  }
  c.adam.options = c.config.adam;
  c.adam.t = adam_t;
  for (const std::string prefix : {"adam.m.", "adam.v."}) {
    for (const auto& [name, tensor] : params) {
      const auto n = r.tensor_header();
      expect(n, prefix + name, tensor->shape());
      (prefix == "adam.m." ? c.adam.m : c.adam.v).push_back(r.tensor_data<T>(n));
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors");
  return c;
}

Precision checkpoint_precision(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  read_header(r);
  if (r.le<std::uint32_t>() == 0) throw FormatError("checkpoint holds no tensors");
  return r.tensor_header().dtype == kDtypeF32 ? Precision::Train : Precision::Verify;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint<T>(bytes);
}

#define CNNIC_INSTANTIATE(T)                                                           \
  template std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>&);          \
  template Checkpoint<T> decode_checkpoint<T>(std::span<const std::uint8_t>);          \
  template void save_checkpoint(const Checkpoint<T>&, const std::filesystem::path&);   \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
