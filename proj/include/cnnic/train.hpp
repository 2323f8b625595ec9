#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnnic/checkpoint.hpp"
#include "cnnic/metrics.hpp"
#include "cnnic/mnist.hpp"
#include "cnnic/run_config.hpp"

namespace cnnic {

struct MetricRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // accuracy of the training batch, dropout active
  std::optional<double> test_acc;
};

inline constexpr const char* kMetricsHeader = "step,lr,train_loss,train_acc,test_acc";

std::string format_metric_row(const MetricRow& row);
std::string metrics_csv(std::span<const MetricRow> rows);

/// Freshly initialized model and zeroed optimizer state for `config`.
template <typename T>
Checkpoint<T> initial_checkpoint(const RunConfig& config);

struct StepResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;  // rate used for this update
};

/// One forward/backward pass on `images` and one Adam update. Dropout masks
/// are keyed by (seed, site, adam step). Throws NonFiniteError, leaving the
/// model untouched, when the loss or a gradient is not finite.
template <typename T>
StepResult train_step(CnnicModel<T>& model, AdamState<T>& adam, const Tensor<T>& images,
                      std::span<const int> labels, std::uint64_t seed);

/// Deterministic inference-mode evaluation in fixed batches.
template <typename T>
EvalReport evaluate(const CnnicModel<T>& model, const Dataset& data, std::size_t batch_size = 100);

struct TrainOptions {
  std::filesystem::path out_dir;  // metrics.csv and checkpoint.bin; empty = no files
  bool write_files = true;
  /// Called after every logged row (for progress output).
  std::function<void(const MetricRow&)> on_row;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> state;
  std::vector<MetricRow> rows;  // rows produced by this call
  bool aborted = false;         // non-finite loss; state is the last good one
  std::string abort_reason;
};

/// Runs the loop from `start` until config.epochs are done or
/// config.max_steps is reached. The probe set is scored every probe_every
/// steps and at the final step. metrics.csv is rewritten after each row
/// (rows already in the file from earlier runs up to start.progress.step are
/// kept). checkpoint.bin is written every checkpoint_every steps and at the
/// end.
template <typename T>
TrainResult<T> train(Checkpoint<T> start, const Dataset& train_set, const Dataset& probe_set,
                     const TrainOptions& options);

/// Reads metrics.csv rows back.
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace cnnic
