#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "cnnic/adam.hpp"
#include "cnnic/cnnic_net.hpp"
#include "cnnic/mnist.hpp"

namespace cnnic {

/// train = single precision, verify = double precision.
enum class Precision { Train, Verify };

std::string to_string(Precision precision);
Precision parse_precision(std::string_view text);

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  CnnicConfig net;
  AdamOptions adam;

  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0 = no cap
  std::size_t batch_size = 50;
  std::uint64_t seed = 1;
  Precision precision = Precision::Train;
  std::size_t subset = 0;  // first-N training images, 0 = all

  std::size_t probe_size = 1000;  // held-out test images scored during training
  std::size_t probe_every = 100;
  std::size_t checkpoint_every = 0;
  std::size_t eval_limit = 0;  // first-N test images for eval/ambiguity, 0 = all

  std::string out_dir = "cnnic_out";
  std::string data_dir;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  /// Sets one key from its text form; unknown keys and malformed values throw
  /// ConfigError.
  void set(const std::string& key, const std::string& value);

  /// Every key in canonical text form.
  KeyValues to_key_values() const;
  /// Keys that describe the model and optimisation (no file-system paths).
  KeyValues snapshot_key_values() const;

  /// Checks the network geometry and the loop settings.
  void validate() const;

  /// The four data files: explicit paths win, then data_dir, then the
  /// CNNIC_DATA_DIR environment variable.
  MnistFiles data_files() const;
};

/// Parses flat `key = value` lines. Blank lines and lines starting with '#'
/// or ';' are ignored. Section headers are rejected: the format is flat.
KeyValues parse_key_values(std::string_view text, const std::string& origin = "config");
KeyValues read_key_values_file(const std::filesystem::path& path);

/// Applies key-values on top of `base`.
RunConfig apply_key_values(RunConfig base, const KeyValues& values);

std::string format_key_values(const KeyValues& values);

/// Shortest text that parses back to the identical double.
std::string format_real(double value);
double parse_real(const std::string& text, const std::string& key);

}  // namespace cnnic
