#include "cnnic/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cnnic/init.hpp"

namespace cnnic {

std::string format_metric_row(const MetricRow& row) {
  std::string line = std::to_string(row.step) + "," + format_real(row.lr) + "," +
                     format_real(row.train_loss) + "," + format_real(row.train_acc) + ",";
  if (row.test_acc) line += format_real(*row.test_acc);
  return line;
}

std::string metrics_csv(std::span<const MetricRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricRow& row : rows) out += format_metric_row(row) + "\n";
  return out;
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(path.string() + ": missing metrics header");
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 5) throw FormatError(path.string() + ": malformed row '" + line + "'");
    MetricRow row;
    row.step = std::stoull(fields[0]);
    row.lr = parse_real(fields[1], "lr");
    row.train_loss = parse_real(fields[2], "train_loss");
    row.train_acc = parse_real(fields[3], "train_acc");
    if (!fields[4].empty()) row.test_acc = parse_real(fields[4], "test_acc");
    rows.push_back(row);
  }
  return rows;
}

template <typename T>
Checkpoint<T> initial_checkpoint(const RunConfig& config) {
  config.validate();
  Checkpoint<T> c;
  c.config = config;
  c.model = initialize_model<T>(config.net, config.seed);
  std::vector<const Tensor<T>*> params;
  for (const auto& [name, t] : std::as_const(c.model).named_parameters()) params.push_back(t);
  c.adam = make_adam_state<T>(std::span<const Tensor<T>* const>(params), config.adam);
  return c;
}

template <typename T>
StepResult train_step(CnnicModel<T>& model, AdamState<T>& adam, const Tensor<T>& images,
                      std::span<const int> labels, std::uint64_t seed) {
  Tape<T> tape(true);
  std::vector<std::vector<Var>> vars;
  std::vector<Tensor<T>*> params;
  for (std::size_t k = 0; k < model.kernels.size(); ++k) {
    std::vector<Var> kv;
    for (Tensor<T>& t : model.kernels[k].tensors) {
      kv.push_back(tape.parameter(t));
      params.push_back(&t);
    }
    vars.push_back(std::move(kv));
  }
  const auto graph = record_cnnic(tape, images, std::span<const std::vector<Var>>(vars),
                                  model.config, Mode::Train, seed, adam.t);
  const auto loss = cnnic_loss(tape, graph, labels);
  StepResult result;
  result.loss = static_cast<double>(tape.value(loss.loss).item());
  if (!std::isfinite(result.loss)) {
    throw NonFiniteError("non-finite training loss at step " + std::to_string(adam.t));
  }
  const EvalReport batch = error_rate(loss.probs, labels);
  result.accuracy = static_cast<double>(batch.sample_count - batch.error_count) /
                    static_cast<double>(batch.sample_count);
  result.lr = lr_schedule(adam);

  const Gradients<T> grads = backward(tape, loss.loss);
  std::vector<Tensor<T>> g;
  g.reserve(params.size());
  for (const auto& kv : vars) {
    for (Var v : kv) g.push_back(grads[v]);
  }
  adam_step(std::span<Tensor<T>* const>(params), std::span<const Tensor<T>>(g), adam);
  return result;
}

template <typename T>
EvalReport evaluate(const CnnicModel<T>& model, const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  EvalReport report;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    const auto out = cnnic_forward(data.images_range<T>(first, count), model, Mode::Infer);
    report.merge(error_rate(out.probs, std::span<const int>(data.labels()).subspan(first, count)));
  }
  return report;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

template <typename T>
TrainResult<T> train(Checkpoint<T> start, const Dataset& train_set, const Dataset& probe_set,
                     const TrainOptions& options) {
  const RunConfig& config = start.config;
  config.validate();

  const bool files = options.write_files && !options.out_dir.empty();
  const auto csv_path = options.out_dir / "metrics.csv";
  const auto ckpt_path = options.out_dir / "checkpoint.bin";
  std::vector<MetricRow> history;
  if (files) {
    std::filesystem::create_directories(options.out_dir);
    if (start.progress.step > 0 && std::filesystem::exists(csv_path)) {
      for (const MetricRow& row : read_metrics_csv(csv_path)) {
        if (row.step <= start.progress.step) history.push_back(row);
      }
    }
    write_text(csv_path, metrics_csv(history));
  }

  TrainResult<T> result{std::move(start), {}, false, {}};
  Checkpoint<T>& state = result.state;
  TrainProgress& progress = state.progress;

  auto probe = [&]() -> double {
    const EvalReport r = evaluate(state.model, probe_set);
    return static_cast<double>(r.sample_count - r.error_count) / static_cast<double>(r.sample_count);
  };
  auto out_of_steps = [&] { return config.max_steps != 0 && progress.step >= config.max_steps; };

  if (progress.epoch < config.epochs && !out_of_steps() && train_set.size() == 0) {
    throw std::invalid_argument("training set is empty");
  }
  while (progress.epoch < config.epochs && !out_of_steps()) {
    const auto plan = batches(train_set.size(), config.batch_size, config.seed, progress.epoch);
    const std::uint64_t epoch = progress.epoch;
    while (progress.epoch == epoch && !out_of_steps()) {
      const auto& idx = plan[progress.batch_in_epoch];
      const auto labels = train_set.labels_of(idx);
      StepResult step;
      try {
        step = train_step(state.model, state.adam, train_set.images<T>(idx),
                          std::span<const int>(labels), config.seed);
      } catch (const NonFiniteError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
      ++progress.step;
      ++progress.batch_in_epoch;
      if (progress.batch_in_epoch == plan.size()) {
        progress.batch_in_epoch = 0;
        ++progress.epoch;
      }
      progress.last_loss = step.loss;
      progress.last_train_acc = step.accuracy;

      const bool final_step = progress.epoch >= config.epochs || out_of_steps();
      MetricRow row{progress.step, step.lr, step.loss, step.accuracy, std::nullopt};
      if (probe_set.size() > 0 &&
          ((config.probe_every != 0 && progress.step % config.probe_every == 0) || final_step)) {
        row.test_acc = probe();
        progress.last_test_acc = *row.test_acc;
      }
      result.rows.push_back(row);
      history.push_back(row);
      if (options.on_row) options.on_row(row);
      if (files) {
        write_text(csv_path, metrics_csv(history));
        if (config.checkpoint_every != 0 && progress.step % config.checkpoint_every == 0) {
          save_checkpoint(state, ckpt_path);
        }
      }
    }
  }
  if (files) save_checkpoint(state, ckpt_path);
  return result;
}

#define CNNIC_INSTANTIATE(T)                                                                      \
  template Checkpoint<T> initial_checkpoint<T>(const RunConfig&);                                 \
  template StepResult train_step(CnnicModel<T>&, AdamState<T>&, const Tensor<T>&,                 \
                                 std::span<const int>, std::uint64_t);                            \
  template EvalReport evaluate(const CnnicModel<T>&, const Dataset&, std::size_t);                \
  template TrainResult<T> train(Checkpoint<T>, const Dataset&, const Dataset&, const TrainOptions&);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
