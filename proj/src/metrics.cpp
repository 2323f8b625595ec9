#include "cnnic/metrics.hpp"

#include <stdexcept>

#include <json.hpp>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/layers.hpp"

namespace cnnic {

void EvalReport::merge(const EvalReport& other) {
  if (confusion.empty()) confusion = std::vector<std::vector<std::size_t>>(
                             other.confusion.size(), std::vector<std::size_t>(other.confusion.size()));
  if (other.confusion.size() != confusion.size()) {
    throw std::invalid_argument("cannot merge reports over different class counts");
  }
  error_count += other.error_count;
  sample_count += other.sample_count;
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    for (std::size_t j = 0; j < confusion.size(); ++j) confusion[i][j] += other.confusion[i][j];
  }
  error_rate = sample_count ? static_cast<double>(error_count) / static_cast<double>(sample_count)
                            : 0.0;
}

EvalReport error_rate_from_predictions(std::span<const int> predictions,
                                       std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("predictions and labels differ in length");
  }
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int truth = labels[i];
    if (truth < 0 || static_cast<std::size_t>(truth) >= num_classes) {
      throw std::out_of_range("label " + std::to_string(truth) + " outside class range");
    }
    ++r.confusion[truth][predictions[i]];
    if (predictions[i] != truth) ++r.error_count;
  }
  r.sample_count = labels.size();
  r.error_rate = r.sample_count ? static_cast<double>(r.error_count) / static_cast<double>(r.sample_count)
                                : 0.0;
  return r;
}

template <typename T>
EvalReport error_rate(const Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw DimensionError("error_rate: probabilities " + to_string(probs.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto predictions = predict(probs);
  return error_rate_from_predictions(predictions, labels, probs.dim(1));
}

double overfitting_index(std::size_t train_errors, std::size_t train_count,
                         std::size_t test_errors, std::size_t test_count) {
  if (train_count == 0 || test_count == 0) {
    throw std::invalid_argument("overfitting_index: sample counts must be positive");
  }
  return static_cast<double>(train_errors) / static_cast<double>(train_count) -
         static_cast<double>(test_errors) / static_cast<double>(test_count);
}

template <typename T>
AmbiguityReport ambiguity_decomposition(std::span<const Tensor<T>> members,
                                        const Tensor<T>& targets) {
  if (members.empty()) throw std::invalid_argument("ambiguity_decomposition: no members");
  if (targets.rank() != 2) {
    throw DimensionError("ambiguity_decomposition: targets must be [B,C], got " +
                         to_string(targets.shape()));
  }
  for (const auto& m : members) {
    if (m.shape() != targets.shape()) {
      throw DimensionError("ambiguity_decomposition: member " + to_string(m.shape()) +
                           " vs targets " + to_string(targets.shape()));
    }
  }
  const std::size_t batch = targets.dim(0), width = targets.dim(1);
  const double inv_m = 1.0 / static_cast<double>(members.size());

  double e = 0, e_bar = 0, a_bar = 0;
  std::vector<double> ensemble(width);
  for (std::size_t n = 0; n < batch; ++n) {
    std::fill(ensemble.begin(), ensemble.end(), 0.0);
    for (const auto& m : members) {
      for (std::size_t c = 0; c < width; ++c) ensemble[c] += static_cast<double>(m[n * width + c]);
    }
    for (double& v : ensemble) v *= inv_m;
    for (std::size_t c = 0; c < width; ++c) {
      const double d = ensemble[c] - static_cast<double>(targets[n * width + c]);
      e += d * d;
    }
    for (const auto& m : members) {
      double err = 0, amb = 0;
      for (std::size_t c = 0; c < width; ++c) {
        const double out = static_cast<double>(m[n * width + c]);
        const double d = out - static_cast<double>(targets[n * width + c]);
        const double a = out - ensemble[c];
        err += d * d;
        amb += a * a;
      }
      e_bar += err * inv_m;
      a_bar += amb * inv_m;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  return {e * inv_b, e_bar * inv_b, a_bar * inv_b, members.size(), batch};
}

template <typename T>
std::vector<Tensor<T>> members_from_logit_map(const Tensor<T>& map) {
  if (map.rank() != 4) {
    throw DimensionError("logit map must be [B,K,P,C], got " + to_string(map.shape()));
  }
  const std::size_t batch = map.dim(0), kernels = map.dim(1), positions = map.dim(2),
                    classes = map.dim(3);
  std::vector<Tensor<T>> out;
  out.reserve(kernels * positions);
  for (std::size_t k = 0; k < kernels; ++k) {
    for (std::size_t p = 0; p < positions; ++p) {
      Tensor<T> logits(Shape{batch, classes});
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < classes; ++c) {
          logits[n * classes + c] = map[((n * kernels + k) * positions + p) * classes + c];
        }
      }
      out.push_back(softmax_rows(logits));
    }
  }
  return out;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor<T> out(Shape{labels.size(), num_classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes) {
      throw std::out_of_range("label " + std::to_string(labels[n]) + " outside class range");
    }
    out[n * num_classes + labels[n]] = T(1);
  }
  return out;
}

std::string to_json(const EvalReport& r) {
  const nlohmann::json j{{"error_count", r.error_count},
                         {"sample_count", r.sample_count},
                         {"error_rate", r.error_rate},
                         {"confusion", r.confusion}};
  return j.dump();
}

#define CNNIC_INSTANTIATE(T)                                                                   \
  template EvalReport error_rate(const Tensor<T>&, std::span<const int>);                      \
  template AmbiguityReport ambiguity_decomposition(std::span<const Tensor<T>>, const Tensor<T>&); \
  template std::vector<Tensor<T>> members_from_logit_map(const Tensor<T>&);                    \
  template Tensor<T> one_hot(std::span<const int>, std::size_t);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic
