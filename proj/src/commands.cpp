#include "cnnic/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cnnic/checkpoint.hpp"
#include "cnnic/train.hpp"

namespace cnnic {
namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string precision;
  std::optional<std::size_t> subset;
  std::string data_dir;
  std::vector<std::string> sets;
};

void add_common_flags(CLI::App& app, CommonFlags& f) {
  app.add_option("--config", f.config_path, "Flat key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Run seed (overrides the config)");
  app.add_option("--out", f.out_dir, "Output directory (overrides the config)");
  app.add_option("--precision", f.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"train", "verify"}));
  app.add_option("--subset", f.subset, "Use the first N training images (0 = all)");
  app.add_option("--data-dir", f.data_dir, "Directory with the MNIST IDX files");
  app.add_option("--set", f.sets, "Extra KEY=VALUE config override, repeatable");
}

// Config file first, then explicit flags.
RunConfig resolve_config(RunConfig base, const CommonFlags& f) {
  if (!f.config_path.empty()) base = apply_key_values(base, read_key_values_file(f.config_path));
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    base.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) base.seed = *f.seed;
  if (!f.out_dir.empty()) base.out_dir = f.out_dir;
  if (!f.precision.empty()) base.precision = parse_precision(f.precision);
  if (f.subset) base.subset = *f.subset;
  if (!f.data_dir.empty()) base.data_dir = f.data_dir;
  base.validate();
  return base;
}

bool same_network(const CnnicConfig& a, const CnnicConfig& b) {
  return a.image_size == b.image_size && a.patch_size == b.patch_size &&
         a.patch_stride == b.patch_stride && a.num_kernels == b.num_kernels &&
         a.preset == b.preset && a.num_classes == b.num_classes;
}

Dataset load_train(const RunConfig& config) {
  const MnistFiles files = config.data_files();
  return load_idx_dataset(files.train_images, files.train_labels, Split::Train).head(config.subset);
}

Dataset load_test(const RunConfig& config, std::size_t limit) {
  const MnistFiles files = config.data_files();
  return load_idx_dataset(files.test_images, files.test_labels, Split::Test).head(limit);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

template <typename T>
int do_train(RunConfig config, const std::string& resume, std::ostream& out) {
  Checkpoint<T> start;
  if (!resume.empty()) {
    start = load_checkpoint<T>(resume);
    if (!same_network(start.config.net, config.net)) {
      throw ConfigError("network settings differ from the checkpoint " + resume);
    }
    config.net = start.config.net;
    start.config = config;
  } else {
    start = initial_checkpoint<T>(config);
  }
  const bool work = config.epochs > start.progress.epoch &&
                    (config.max_steps == 0 || start.progress.step < config.max_steps);
  Dataset train_set, probe_set;
  if (work) {
    train_set = load_train(config);
    probe_set = load_test(config, config.probe_size);
  }
  TrainOptions options;
  options.out_dir = config.out_dir;
  options.on_row = [&](const MetricRow& row) {
    if (!row.test_acc) return;
    out << "step " << row.step << "  lr " << row.lr << "  loss " << fixed(row.train_loss, 4)
        << "  train_acc " << fixed(row.train_acc, 4) << "  probe_acc " << fixed(*row.test_acc, 4)
        << std::endl;
  };
  const auto result = train(std::move(start), train_set, probe_set, options);
  if (result.aborted) {
    out << "training stopped: " << result.abort_reason << "\n";
    return 2;
  }
  out << "wrote " << (std::filesystem::path(config.out_dir) / "metrics.csv").string() << " and "
      << (std::filesystem::path(config.out_dir) / "checkpoint.bin").string() << " after "
      << result.state.progress.step << " steps\n";
  return 0;
}

template <typename T>
int do_eval(const std::string& path, const RunConfig& overrides, std::ostream& out) {
  const Checkpoint<T> c = load_checkpoint<T>(path);
  RunConfig config = c.config;
  config.data_dir = overrides.data_dir;
  config.train_images = overrides.train_images;
  config.train_labels = overrides.train_labels;
  config.test_images = overrides.test_images;
  config.test_labels = overrides.test_labels;
  config.subset = overrides.subset ? overrides.subset : c.config.subset;
  const std::size_t limit = overrides.eval_limit;
  Dataset train_set = load_train(config);
  if (limit) train_set = train_set.head(limit);
  const Dataset test_set = load_test(config, limit);
  const EvalSummary s = summarize(evaluate(c.model, train_set), evaluate(c.model, test_set));
  out << format_eval(s);
  const auto json_path = std::filesystem::path(overrides.out_dir) / "eval.json";
  write_file(json_path, eval_json(s) + "\n");
  out << "wrote " << json_path.string() << "\n";
  return 0;
}

template <typename T>
int do_ambiguity(const std::string& path, const RunConfig& overrides, std::ostream& out) {
  const Checkpoint<T> c = load_checkpoint<T>(path);
  RunConfig config = c.config;
  config.data_dir = overrides.data_dir;
  config.test_images = overrides.test_images;
  config.test_labels = overrides.test_labels;
  const Dataset test_set = load_test(config, overrides.eval_limit);

  double e = 0, e_bar = 0, a_bar = 0;
  std::size_t members = 0;
  const std::size_t batch = 100;
  for (std::size_t first = 0; first < test_set.size(); first += batch) {
    const std::size_t n = std::min(batch, test_set.size() - first);
    const auto fwd = cnnic_forward(test_set.images_range<T>(first, n), c.model, Mode::Infer);
    const auto parts = members_from_logit_map(fwd.logit_map);
    const auto targets = one_hot<T>(std::span<const int>(test_set.labels()).subspan(first, n),
                                    c.config.net.num_classes);
    const auto r = ambiguity_decomposition(std::span<const Tensor<T>>(parts), targets);
    const double w = static_cast<double>(n);
    e += w * r.ensemble_error;
    e_bar += w * r.mean_member_error;
    a_bar += w * r.mean_ambiguity;
    members = r.members;
  }
  const double count = static_cast<double>(test_set.size());
  AmbiguityReport r{e / count, e_bar / count, a_bar / count, members, test_set.size()};
  out << "members " << r.members << " (kernel x position softmax outputs), samples " << r.samples
      << "\n"
      << "E      " << format_real(r.ensemble_error) << "\n"
      << "E_bar  " << format_real(r.mean_member_error) << "\n"
      << "A_bar  " << format_real(r.mean_ambiguity) << "\n"
      << "E_bar - A_bar - E = " << format_real(r.mean_member_error - r.mean_ambiguity - r.ensemble_error)
      << "\n";
  const nlohmann::json j{{"members", r.members},
                         {"samples", r.samples},
                         {"E", r.ensemble_error},
                         {"E_bar", r.mean_member_error},
                         {"A_bar", r.mean_ambiguity}};
  const auto json_path = std::filesystem::path(overrides.out_dir) / "ambiguity.json";
  write_file(json_path, j.dump(2) + "\n");
  out << "wrote " << json_path.string() << "\n";
  return 0;
}

std::string checkpoint_path(const std::string& given, const RunConfig& config) {
  return given.empty() ? (std::filesystem::path(config.out_dir) / "checkpoint.bin").string() : given;
}

Precision stored_precision(const std::string& path) {
  return checkpoint_precision(read_file_bytes(path));
}

}  // namespace

std::string format_parameter_table(const CnnicConfig& config) {
  const ParameterCount count = count_parameters(config);
  std::ostringstream os;
  os << to_string(config.preset) << ", patch " << config.patch_size << ", K=" << config.num_kernels
     << "\n";
  for (const auto& [name, n] : count.per_layer) {
    os << "  " << std::left << std::setw(16) << name << std::right << std::setw(10) << n << "\n";
  }
  os << "  " << std::left << std::setw(16) << "per kernel" << std::right << std::setw(10)
     << count.per_kernel << "\n";
  os << "  " << std::left << std::setw(16) << "total" << std::right << std::setw(10) << count.total
     << "\n";
  return os.str();
}

std::string format_gradcheck(const std::vector<GradcheckReport>& reports) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2);
  for (const GradcheckReport& r : reports) {
    os << (r.passed ? "PASS " : "FAIL ") << r.label << "  worst " << r.worst_error << "\n";
    for (const ParamCheck& p : r.params) {
      os << "  " << (p.passed ? "pass " : "FAIL ") << std::left << std::setw(20) << p.name
         << std::right << " checked " << p.checked;
      if (p.skipped) os << " (skipped " << p.skipped << " across a ReLU kink)";
      os << "  worst " << p.worst_error << "  analytic " << p.analytic << "  numeric "
         << p.numeric << "\n";
    }
  }
  return os.str();
}

EvalSummary summarize(EvalReport train, EvalReport test) {
  EvalSummary s;
  s.overfitting = overfitting_index(train.error_count, train.sample_count, test.error_count,
                                    test.sample_count);
  s.test_minus_train = -s.overfitting;
  s.train = std::move(train);
  s.test = std::move(test);
  return s;
}

std::string format_eval(const EvalSummary& s) {
  std::ostringstream os;
  os << "train error " << s.train.error_count << "/" << s.train.sample_count << " = "
     << format_real(s.train.error_rate) << "\n"
     << "test error  " << s.test.error_count << "/" << s.test.sample_count << " = "
     << format_real(s.test.error_rate) << "\n"
     << "overfitting index O (train - test) = " << format_real(s.overfitting) << "\n"
     << "test - train                       = " << format_real(s.test_minus_train) << "\n";
  return os.str();
}

std::string eval_json(const EvalSummary& s) {
  const nlohmann::json j{{"train", nlohmann::json::parse(to_json(s.train))},
                         {"test", nlohmann::json::parse(to_json(s.test))},
                         {"overfitting_index", s.overfitting},
                         {"test_minus_train", s.test_minus_train}};
  return j.dump(2);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CNNIC: a small CNN used as the convolution kernel over image patches"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, count_flags, grad_flags, amb_flags;
  std::string resume, eval_ckpt, amb_ckpt;
  std::size_t coords = 16;

  auto* train_cmd = app.add_subcommand("train", "Train and write metrics.csv + checkpoint.bin");
  add_common_flags(*train_cmd, train_flags);
  train_cmd->add_option("--checkpoint", resume, "Resume from this checkpoint")
      ->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Error rates on both splits and the overfitting index");
  add_common_flags(*eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (default <out>/checkpoint.bin)");

  auto* count_cmd = app.add_subcommand("count-params", "Per-layer parameter table");
  add_common_flags(*count_cmd, count_flags);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common_flags(*grad_cmd, grad_flags);
  grad_cmd->add_option("--coords", coords,
                       "Sampled coordinates per tensor in the composite check (0 = all)");

  auto* amb_cmd = app.add_subcommand("ambiguity", "Ensemble ambiguity decomposition on the test set");
  add_common_flags(*amb_cmd, amb_flags);
  amb_cmd->add_option("--checkpoint", amb_ckpt, "Checkpoint (default <out>/checkpoint.bin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) {
      const RunConfig config = resolve_config(RunConfig{}, train_flags);
      return config.precision == Precision::Train ? do_train<float>(config, resume, out)
                                                  : do_train<double>(config, resume, out);
    }
    if (*eval_cmd) {
      const RunConfig config = resolve_config(RunConfig{}, eval_flags);
      const std::string path = checkpoint_path(eval_ckpt, config);
      return stored_precision(path) == Precision::Train ? do_eval<float>(path, config, out)
                                                        : do_eval<double>(path, config, out);
    }
    if (*amb_cmd) {
      const RunConfig config = resolve_config(RunConfig{}, amb_flags);
      const std::string path = checkpoint_path(amb_ckpt, config);
      return stored_precision(path) == Precision::Train ? do_ambiguity<float>(path, config, out)
                                                        : do_ambiguity<double>(path, config, out);
    }
    if (*count_cmd) {
      out << format_parameter_table(resolve_config(RunConfig{}, count_flags).net);
      return 0;
    }
    if (*grad_cmd) {
      const RunConfig config = resolve_config(RunConfig{}, grad_flags);
      GradcheckOptions options;
      options.seed = config.seed;
      std::vector<GradcheckReport> reports = check_layers(config.seed, options);
      options.max_coords = coords;
      options.skip_kinks = true;
      reports.push_back(check_composite(config.net, config.seed, 2, options));
      out << format_gradcheck(reports);
      bool ok = true;
      for (const auto& r : reports) ok = ok && r.passed;
      out << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cnnic
