#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "cnnic/adam.hpp"
#include "cnnic/cnnic_net.hpp"
#include "cnnic/run_config.hpp"

namespace cnnic {

struct TrainProgress {
  std::uint64_t step = 0;            // optimizer steps taken
  std::uint64_t epoch = 0;           // epoch of the next batch
  std::uint64_t batch_in_epoch = 0;  // index of the next batch within that epoch
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  double last_train_acc = std::numeric_limits<double>::quiet_NaN();
  double last_test_acc = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
struct Checkpoint {
  RunConfig config;
  CnnicModel<T> model;
  AdamState<T> adam;
  TrainProgress progress;
};

/// Checkpoint container, version 1. All integers little-endian.
///
///   8 bytes   magic "CNNICKPT"
///   u32       format version (1)
///   u64       length of the text block, then the text block: sorted
///             "key=value\n" lines (configuration snapshot and "state.*"
///             progress/metrics keys; reals in shortest round-trip form)
///   u32       tensor count, then per tensor:
///               u32 name length, name bytes
///               u8  dtype (1 = float32, 2 = float64)
///               u32 rank, rank x u64 extents
///               element data, IEEE-754 little-endian
///
/// Tensors are the model parameters ("k<i>.<layer>.<weight|bias>") followed
/// by the Adam moments ("adam.m.<name>", "adam.v.<name>").
inline constexpr char kCheckpointMagic[8] = {'C', 'N', 'N', 'I', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& checkpoint);

template <typename T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Precision of the tensors stored in an encoded checkpoint.
Precision checkpoint_precision(std::span<const std::uint8_t> bytes);

/// Writes via a temporary file and rename, so a crash never leaves a torn file.
template <typename T>
void save_checkpoint(const Checkpoint<T>& checkpoint, const std::filesystem::path& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace cnnic
