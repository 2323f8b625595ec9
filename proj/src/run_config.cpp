#include "cnnic/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cnnic {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::uint64_t parse_uint(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

std::string to_string(Precision precision) {
  return precision == Precision::Train ? "train" : "verify";
}

Precision parse_precision(std::string_view text) {
  if (text == "train" || text == "single" || text == "float") return Precision::Train;
  if (text == "verify" || text == "double") return Precision::Verify;
  throw ConfigError("unknown precision '" + std::string(text) + "' (expected train, verify)");
}

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

double parse_real(const std::string& text, const std::string& key) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("key '" + key + "': expected a real number, got '" + text + "'");
  }
  return v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto u = [&] { return static_cast<std::size_t>(parse_uint(value, key)); };
  auto r = [&] { return parse_real(value, key); };
  if (key == "image_size") net.image_size = u();
  else if (key == "patch_size") net.patch_size = u();
  else if (key == "patch_stride") net.patch_stride = u();
  else if (key == "num_kernels") net.num_kernels = u();
  else if (key == "preset") net.preset = parse_preset(value);
  else if (key == "dropout_p") net.dropout_p = r();
  else if (key == "num_classes") net.num_classes = u();
  else if (key == "averaging") net.averaging = parse_averaging(value);
  else if (key == "base_lr") adam.base_lr = r();
  else if (key == "beta1") adam.beta1 = r();
  else if (key == "beta2") adam.beta2 = r();
  else if (key == "eps") adam.eps = r();
  else if (key == "decay_rate") adam.decay_rate = r();
  else if (key == "decay_every") adam.decay_every = parse_uint(value, key);
  else if (key == "epochs") epochs = u();
  else if (key == "max_steps") max_steps = u();
  else if (key == "batch_size") batch_size = u();
  else if (key == "seed") seed = parse_uint(value, key);
  else if (key == "precision") precision = parse_precision(value);
  else if (key == "subset") subset = u();
  else if (key == "probe_size") probe_size = u();
  else if (key == "probe_every") probe_every = u();
  else if (key == "checkpoint_every") checkpoint_every = u();
  else if (key == "eval_limit") eval_limit = u();
  else if (key == "out_dir") out_dir = value;
  else if (key == "data_dir") data_dir = value;
  else if (key == "train_images") train_images = value;
  else if (key == "train_labels") train_labels = value;
  else if (key == "test_images") test_images = value;
  else if (key == "test_labels") test_labels = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

KeyValues RunConfig::snapshot_key_values() const {
  return {
      {"image_size", std::to_string(net.image_size)},
      {"patch_size", std::to_string(net.patch_size)},
      {"patch_stride", std::to_string(net.patch_stride)},
      {"num_kernels", std::to_string(net.num_kernels)},
      {"preset", to_string(net.preset)},
      {"dropout_p", format_real(net.dropout_p)},
      {"num_classes", std::to_string(net.num_classes)},
      {"averaging", to_string(net.averaging)},
      {"base_lr", format_real(adam.base_lr)},
      {"beta1", format_real(adam.beta1)},
      {"beta2", format_real(adam.beta2)},
      {"eps", format_real(adam.eps)},
      {"decay_rate", format_real(adam.decay_rate)},
      {"decay_every", std::to_string(adam.decay_every)},
      {"epochs", std::to_string(epochs)},
      {"max_steps", std::to_string(max_steps)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(seed)},
      {"precision", to_string(precision)},
      {"subset", std::to_string(subset)},
      {"probe_size", std::to_string(probe_size)},
      {"probe_every", std::to_string(probe_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"eval_limit", std::to_string(eval_limit)},
  };
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = snapshot_key_values();
  kv["out_dir"] = out_dir;
  kv["data_dir"] = data_dir;
  kv["train_images"] = train_images;
  kv["train_labels"] = train_labels;
  kv["test_images"] = test_images;
  kv["test_labels"] = test_labels;
  return kv;
}

void RunConfig::validate() const {
  net.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(adam.base_lr > 0.0) || !std::isfinite(adam.base_lr)) {
    throw ConfigError("base_lr must be positive");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0,1)");
  }
  if (!(adam.eps >= 0.0)) throw ConfigError("eps must be non-negative");
  if (!(adam.decay_rate > 0.0 && adam.decay_rate <= 1.0)) {
    throw ConfigError("decay_rate must lie in (0,1]");
  }
}

MnistFiles RunConfig::data_files() const {
  std::string root = data_dir;
  if (root.empty()) {
    if (const char* env = std::getenv("CNNIC_DATA_DIR")) root = env;
  }
  MnistFiles files = MnistFiles::in_directory(root.empty() ? "." : root);
  if (!train_images.empty()) files.train_images = train_images;
  if (!train_labels.empty()) files.train_labels = train_labels;
  if (!test_images.empty()) files.test_images = test_images;
  if (!test_labels.empty()) files.test_labels = test_labels;
  return files;
}

KeyValues parse_key_values(std::string_view text, const std::string& origin) {
  KeyValues out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (t.front() == '[') throw ConfigError(where + ": sections are not supported (flat key = value only)");
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (out.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

KeyValues read_key_values_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

RunConfig apply_key_values(RunConfig base, const KeyValues& values) {
  for (const auto& [key, value] : values) base.set(key, value);
  return base;
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [key, value] : values) out += key + "=" + value + "\n";
  return out;
}

}  // namespace cnnic
