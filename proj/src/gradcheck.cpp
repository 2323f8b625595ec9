#include "cnnic/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnnic/init.hpp"
#include "cnnic/layers.hpp"
#include "cnnic/random.hpp"

namespace cnnic {
namespace {

Tensor<double> normal(const Shape& shape, CounterRng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.data()) v = scale * rng.next_normal();
  return t;
}

// Values bounded away from zero so ReLU kinks sit far from the probe step.
Tensor<double> away_from_zero(const Shape& shape, CounterRng& rng) {
  Tensor<double> t(shape);
  for (double& v : t.data()) {
    const double mag = 0.1 + rng.next_uniform();
    v = rng.next_uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Random order over 0..total-1 (identity order when every coordinate is used).
std::vector<std::size_t> coord_order(std::size_t total, bool shuffle, CounterRng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (!shuffle) return idx;
  for (std::size_t i = 0; i + 1 < total; ++i) {
    std::swap(idx[i], idx[i + rng.next_below(total - i)]);
  }
  return idx;
}

struct Evaluation {
  double loss = 0.0;
  std::vector<bool> active;  // on/off state of every ReLU unit
};

Evaluation eval_loss(const NamedTensors& params, const LossBuilder& loss, bool track_relu) {
  Tape<double> tape(false);
  std::vector<Var> vars;
  for (const auto& [name, t] : params) vars.push_back(tape.parameter(t, name));
  Evaluation e;
  e.loss = tape.value(loss(tape, vars)).item();
  if (track_relu) {
    for (std::size_t i = 0; i < tape.size(); ++i) {
      const Var v{i, tape.id()};
      const std::string& op = tape.name(v);
      if (op != "relu" && op != "conv2d_relu") continue;
      for (double x : tape.value(v).data()) e.active.push_back(x > 0.0);
    }
  }
  return e;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport check_gradients(std::string label, const NamedTensors& params,
                                const LossBuilder& loss, const GradcheckOptions& options) {
  GradcheckReport report;
  report.label = std::move(label);

  Tape<double> tape(true);
  std::vector<Var> vars;
  for (const auto& [name, t] : params) vars.push_back(tape.parameter(t, name));
  const Var out = loss(tape, vars);
  const Gradients<double> grads = backward(tape, out);

  const std::vector<bool> base_active =
      options.skip_kinks ? eval_loss(params, loss, true).active : std::vector<bool>{};
  CounterRng rng(options.seed, 0x6772616463686bULL);
  NamedTensors probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamCheck check;
    check.name = params[p].first;
    check.shape = params[p].second.shape();
    const Tensor<double>& analytic = grads[vars[p]];
    const std::size_t total = params[p].second.size();
    const bool sampled = options.max_coords != 0 && options.max_coords < total;
    const std::size_t wanted = sampled ? options.max_coords : total;
    const std::size_t attempts = sampled ? std::min(total, 16 * options.max_coords) : total;
    const auto order = coord_order(total, sampled, rng);
    for (std::size_t a = 0; a < attempts && check.checked < wanted; ++a) {
      const std::size_t i = order[a];
      const double x = params[p].second[i];
      probe[p].second[i] = x + options.step;
      const Evaluation up = eval_loss(probe, loss, options.skip_kinks);
      probe[p].second[i] = x - options.step;
      const Evaluation down = eval_loss(probe, loss, options.skip_kinks);
      probe[p].second[i] = x;
      if (options.skip_kinks && (up.active != base_active || down.active != base_active)) {
        ++check.skipped;
        continue;
      }
      const double numeric = (up.loss - down.loss) / (2.0 * options.step);
      const double err = relative_error(analytic[i], numeric, options.floor);
      ++check.checked;
      if (err > check.worst_error || check.checked == 1) {
        check.worst_error = err;
        check.worst_index = i;
        check.analytic = analytic[i];
        check.numeric = numeric;
      }
    }
    check.passed = check.checked > 0 && check.worst_error < options.tolerance;
    report.worst_error = std::max(report.worst_error, check.worst_error);
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

std::vector<GradcheckReport> check_layers(std::uint64_t seed, const GradcheckOptions& options) {
  CounterRng rng(seed, 0x6c61796572ULL);
  std::vector<GradcheckReport> out;
  auto probe_loss = [](Tensor<double> weights) {
    return [weights = std::move(weights)](Tape<double>& tape, Var y) {
      return weighted_sum(tape, y, weights);
    };
  };

  {
    NamedTensors p{{"x", normal({2, 2, 6, 6}, rng)},
                   {"w", normal({3, 2, 3, 3}, rng, 0.5)},
                   {"b", normal({3}, rng, 0.1)}};
    auto probe = probe_loss(normal({2, 3, 4, 4}, rng));
    out.push_back(check_gradients("conv2d+relu", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, conv2d_relu(t, v[0], v[1], v[2], 1, true));
    }, options));
  }
  {
    NamedTensors p{{"x", normal({2, 2, 7, 7}, rng)},
                   {"w", normal({3, 2, 3, 3}, rng, 0.5)},
                   {"b", normal({3}, rng, 0.1)}};
    auto probe = probe_loss(normal({2, 3, 3, 3}, rng));
    out.push_back(check_gradients("conv2d stride 2", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, conv2d_relu(t, v[0], v[1], v[2], 2, false));
    }, options));
  }
  {
    NamedTensors p{{"x", normal({2, 3, 4, 6}, rng)}};
    auto probe = probe_loss(normal({2, 3, 2, 3}, rng));
    out.push_back(check_gradients("avg_pool_2x2", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, avg_pool_2x2(t, v[0]));
    }, options));
  }
  {
    NamedTensors p{{"x", normal({3, 5}, rng)}, {"w", normal({5, 4}, rng)}, {"b", normal({4}, rng)}};
    auto probe = probe_loss(normal({3, 4}, rng));
    out.push_back(check_gradients("dense", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, dense(t, v[0], v[1], v[2]));
    }, options));
  }
  {
    NamedTensors p{{"x", away_from_zero({4, 6}, rng)}};
    auto probe = probe_loss(normal({4, 6}, rng));
    out.push_back(check_gradients("relu", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, relu(t, v[0]));
    }, options));
  }
  {
    NamedTensors p{{"x", normal({4, 25}, rng)}};
    auto probe = probe_loss(normal({4, 25}, rng));
    const DropoutKey key{seed, 7, 3};
    out.push_back(check_gradients("dropout", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, dropout(t, v[0], 0.4, Mode::Train, key));
    }, options));
  }
  {
    NamedTensors p{{"x", normal({2, 3, 4}, rng)}};
    auto probe = probe_loss(normal({4, 6}, rng));
    out.push_back(check_gradients("reshape", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, reshape(t, v[0], Shape{4, 6}));
    }, options));
  }
  {
    NamedTensors p{{"logits", normal({4, 5}, rng)}};
    const std::vector<int> labels{0, 3, 4, 1};
    out.push_back(check_gradients("softmax_cross_entropy", p,
                                  [&](Tape<double>& t, std::span<const Var> v) {
      return softmax_cross_entropy(t, v[0], labels).loss;
    }, options));
  }
  {
    NamedTensors p{{"logits", normal({3, 4}, rng)}};
    auto probe = probe_loss(normal({3, 4}, rng));
    out.push_back(check_gradients("softmax", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, softmax(t, v[0]));
    }, options));
  }
  {
    Tensor<double> probs({3, 4});
    for (double& x : probs.data()) x = 0.2 + rng.next_uniform();
    NamedTensors p{{"probs", probs}};
    const std::vector<int> labels{2, 0, 3};
    out.push_back(check_gradients("nll_loss", p, [&](Tape<double>& t, std::span<const Var> v) {
      return nll_loss(t, v[0], labels);
    }, options));
  }
  {
    NamedTensors p{{"member0", normal({2 * 3, 4}, rng)}, {"member1", normal({2 * 3, 4}, rng)}};
    auto probe = probe_loss(normal({2, 4}, rng));
    out.push_back(check_gradients("ensemble_mean", p, [&](Tape<double>& t, std::span<const Var> v) {
      return probe(t, ensemble_mean(t, v, 2));
    }, options));
  }
  return out;
}

GradcheckReport check_composite(const CnnicConfig& config, std::uint64_t seed, std::size_t batch,
                                const GradcheckOptions& options) {
  config.validate();
  const CnnicModel<double> model = initialize_model<double>(config, seed);
  CounterRng rng(seed, 0x636f6d706f73ULL);
  Tensor<double> images({batch, 1, config.image_size, config.image_size});
  for (double& x : images.data()) x = rng.next_uniform();
  std::vector<int> labels(batch);
  for (int& y : labels) y = static_cast<int>(rng.next_below(config.num_classes));

  NamedTensors params;
  for (const auto& [name, t] : model.named_parameters()) params.emplace_back(name, *t);
  const std::size_t per_kernel = kernel_parameter_shapes(config).size();

  auto loss = [&](Tape<double>& tape, std::span<const Var> vars) {
    std::vector<std::vector<Var>> kernels;
    for (std::size_t k = 0; k < config.num_kernels; ++k) {
      kernels.emplace_back(vars.begin() + k * per_kernel, vars.begin() + (k + 1) * per_kernel);
    }
    const auto graph = record_cnnic(tape, images, std::span<const std::vector<Var>>(kernels),
                                    config, Mode::Train, seed, 0);
    return cnnic_loss(tape, graph, labels).loss;
  };
  return check_gradients("cnnic composite (" + to_string(config.preset) + ", batch " +
                             std::to_string(batch) + ")",
                         params, loss, options);
}

}  // namespace cnnic
