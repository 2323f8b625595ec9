#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/init.hpp"
#include "sharing_oracle.hpp"
#include "support.hpp"

namespace cnnic {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;
using testing::copy_oracle;
using testing::naive_slice;
using testing::random_model;
using testing::shared_run;
using testing::sharing_config;


// ---- independent oracles -------------------------------------------------

Tensor<double> naive_pool(const Tensor<double>& x) {  // [C,H,W]
  const std::size_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
  Tensor<double> out({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out.at({c, i, j}) = (x.at({c, 2 * i, 2 * j}) + x.at({c, 2 * i, 2 * j + 1}) +
                             x.at({c, 2 * i + 1, 2 * j}) + x.at({c, 2 * i + 1, 2 * j + 1})) / 4;
  return out;
}

std::vector<double> naive_dense(const std::vector<double>& x, const Tensor<double>& w,
                                const Tensor<double>& b, bool relu) {
  std::vector<double> y(w.dim(1));
  for (std::size_t u = 0; u < y.size(); ++u) {
    double s = b[u];
    for (std::size_t f = 0; f < x.size(); ++f) s += x[f] * w.at({f, u});
    y[u] = relu ? std::max(s, 0.0) : s;
  }
  return y;
}

// CNNIC-2 small CNN on one [1,p,p] patch, written out layer by layer.
std::vector<double> naive_cnnic2(const Tensor<double>& patch, const SmallCnnWeights<double>& w) {
  const auto& t = w.tensors;
  auto h = testing::naive_conv(patch, t[0], t[1], 1, true);
  h = naive_pool(h);
  h = testing::naive_conv(h, t[2], t[3], 1, true);
  h = naive_pool(h);
  auto f = naive_dense(h.values(), t[4], t[5], true);
  return naive_dense(f, t[6], t[7], false);
}


std::vector<double> naive_softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - m);
  for (double& v : p) v /= s;
  return p;
}

// ---- config and shapes ---------------------------------------------------

TEST(Config, GridAndValidation) {
  CnnicConfig c;
  EXPECT_EQ(c.grid_side(), 3u);
  EXPECT_EQ(c.positions(), 9u);
  c.patch_size = 28;
  EXPECT_EQ(c.grid_side(), 1u);
  c.patch_size = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c.patch_size = 24;
  c.patch_stride = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.patch_stride = 2;
  c.patch_size = 10;  // 5x5 conv -> 6, pool -> 3, 5x5 conv does not fit
  EXPECT_THROW(c.validate(), ConfigError);
  c.patch_size = 26;  // 22 -> 11: odd map before the second pool? conv -> 7, odd
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Shapes, Cnnic2FullImageTrace) {
  CnnicConfig c;
  c.patch_size = 28;
  const auto traced = trace_shapes(c);
  ASSERT_EQ(traced.size(), 6u);
  EXPECT_EQ(traced[0].output, (Shape{64, 24, 24}));
  EXPECT_EQ(traced[1].output, (Shape{64, 12, 12}));
  EXPECT_EQ(traced[2].output, (Shape{64, 8, 8}));
  EXPECT_EQ(traced[3].output, (Shape{64, 4, 4}));
  EXPECT_EQ(element_count(traced[3].output), 1024u);
  EXPECT_EQ(traced[4].output, (Shape{1024}));
  EXPECT_EQ(traced[5].output, (Shape{10}));
}

TEST(CountParameters, Cnnic2FullImage) {
  CnnicConfig c;
  c.patch_size = 28;
  const auto count = count_parameters(c);
  const std::vector<std::pair<std::string, std::size_t>> expected{
      {"conv1", 1664}, {"conv2", 102464}, {"fc", 1049600}, {"logits", 10250}};
  EXPECT_EQ(count.per_layer, expected);
  EXPECT_EQ(count.total, 1163978u);
}

TEST(CountParameters, Cnnic3FullImage) {
  CnnicConfig c;
  c.patch_size = 28;
  c.preset = Preset::Cnnic3;
  const auto count = count_parameters(c);
  const std::vector<std::pair<std::string, std::size_t>> expected{
      {"conv1", 832}, {"conv2", 51264}, {"conv3", 102464}, {"fc", 590848}, {"logits", 10250}};
  EXPECT_EQ(count.per_layer, expected);
  EXPECT_EQ(count.total, 755658u);
}

TEST(CountParameters, KernelsAreIndependentCopiesAndMatchEnumeration) {
  for (Preset preset : {Preset::Cnnic2, Preset::Cnnic3, Preset::Tiny}) {
    CnnicConfig c;
    c.preset = preset;
    const auto one = count_parameters(c).total;
    c.num_kernels = 2;
    EXPECT_EQ(count_parameters(c).total, 2 * one);
    const auto model = zero_model<double>(c);
    std::size_t brute = 0;
    for (const auto& [name, t] : model.named_parameters()) brute += t->size();
    EXPECT_EQ(brute, count_parameters(c).total) << to_string(preset);
  }
}

// ---- patches -------------------------------------------------------------

TEST(ExtractPatches, FullImagePatch) {
  auto images = random_tensor({2, 1, 28, 28}, 1);
  const auto p = extract_patches(images, 28, 2);
  EXPECT_EQ(p.shape(), (Shape{2, 1, 1, 28, 28}));
  EXPECT_EQ(p.values(), images.values());
}

TEST(ExtractPatches, DefaultGeometryNinePatches) {
  const auto p = extract_patches(random_tensor({1, 1, 28, 28}, 2), 24, 2);
  EXPECT_EQ(p.shape(), (Shape{1, 9, 1, 24, 24}));
}

TEST(ExtractPatches, MatchesNaiveSlicing) {
  auto images = random_tensor({2, 1, 6, 6}, 3);
  const auto p = extract_patches(images, 4, 2);
  ASSERT_EQ(p.shape(), (Shape{2, 4, 1, 4, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t gy = 0; gy < 2; ++gy)
      for (std::size_t gx = 0; gx < 2; ++gx) {
        const auto ref = naive_slice(images, n, 2 * gy, 2 * gx, 4);
        for (std::size_t i = 0; i < 16; ++i) {
          EXPECT_EQ(p[((n * 4 + gy * 2 + gx) * 16) + i], ref[i]);
        }
      }
}

// ---- forward -------------------------------------------------------------

TEST(SmallCnn, ZeroNetworkGivesZeroLogits) {
  CnnicConfig c;
  const auto model = zero_model<double>(c);
  const auto out = small_cnn_forward(random_tensor({3, 1, 24, 24}, 4), model.kernels[0], c,
                                     Mode::Train, {1, 0, 0});
  EXPECT_EQ(out, Tensor<double>({3, 10}));
}

TEST(SmallCnn, InferModeDeterministic) {
  CnnicConfig c;
  const auto model = initialize_model<float>(c, 5);
  auto x = random_tensor<float>({4, 1, 24, 24}, 6, 0, 1);
  EXPECT_EQ(small_cnn_forward(x, model.kernels[0], c, Mode::Infer),
            small_cnn_forward(x, model.kernels[0], c, Mode::Infer));
}

TEST(SmallCnn, GeometryMismatch) {
  CnnicConfig c;
  const auto model = zero_model<double>(c);
  EXPECT_THROW(small_cnn_forward(Tensor<double>({1, 1, 20, 20}), model.kernels[0], c, Mode::Infer),
               DimensionError);
}

TEST(CnnicForward, SinglePositionIsPlainSoftmax) {
  CnnicConfig c;
  c.patch_size = 28;
  const auto model = random_model(c, 10);
  auto images = random_tensor({3, 1, 28, 28}, 7, 0, 1);
  const auto out = cnnic_forward(images, model, Mode::Infer);
  const auto z = small_cnn_forward(images, model.kernels[0], c, Mode::Infer);
  EXPECT_LT(max_abs_diff(out.probs, softmax_rows(z)), 1e-15);
}

TEST(CnnicForward, UniformImageAveragesToAnyPatch) {
  CnnicConfig c;
  const auto model = random_model(c, 20);
  const Tensor<double> images({1, 1, 28, 28}, 0.3);
  const auto out = cnnic_forward(images, model, Mode::Infer);
  const auto z = small_cnn_forward(Tensor<double>({1, 1, 24, 24}, 0.3), model.kernels[0], c,
                                   Mode::Infer);
  EXPECT_LT(max_abs_diff(out.probs, softmax_rows(z)), 1e-14);
}

// Loop over every patch with a layer-by-layer oracle, average logits over
// kernels and positions, softmax once.
TEST(CnnicForward, MatchesPerPatchOracle) {
  CnnicConfig c;
  c.num_kernels = 2;
  const auto model = random_model(c, 30, 0.05);
  auto images = random_tensor({2, 1, 28, 28}, 8, 0, 1);
  const auto out = cnnic_forward(images, model, Mode::Infer);
  ASSERT_EQ(out.logit_map.shape(), (Shape{2, 2, 9, 10}));
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> mean(10, 0.0);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t gy = 0; gy < 3; ++gy)
        for (std::size_t gx = 0; gx < 3; ++gx) {
          const auto z = naive_cnnic2(naive_slice(images, n, 2 * gy, 2 * gx, 24), model.kernels[k]);
          for (std::size_t cls = 0; cls < 10; ++cls) {
            EXPECT_NEAR(out.logit_map.at({n, k, gy * 3 + gx, cls}), z[cls], 1e-10);
            mean[cls] += z[cls] / 18.0;
          }
        }
    const auto p = naive_softmax(mean);
    for (std::size_t cls = 0; cls < 10; ++cls) EXPECT_NEAR(out.probs.at({n, cls}), p[cls], 1e-10);
  }
}

TEST(CnnicForward, ProbabilityAveragingSwitch) {
  CnnicConfig c;
  c.preset = Preset::Tiny;
  c.averaging = Averaging::Probabilities;
  const auto model = random_model(c, 40);
  auto images = random_tensor({2, 1, 28, 28}, 9, 0, 1);
  const auto out = cnnic_forward(images, model, Mode::Infer);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t cls = 0; cls < 10; ++cls) {
      double mean = 0;
      for (std::size_t pos = 0; pos < 9; ++pos) {
        std::vector<double> z(10);
        for (std::size_t j = 0; j < 10; ++j) z[j] = out.logit_map.at({n, 0, pos, j});
        mean += naive_softmax(z)[cls] / 9.0;
      }
      EXPECT_NEAR(out.probs.at({n, cls}), mean, 1e-14);
    }
}

TEST(CnnicForward, PermutationInvarianceAndRowSums) {
  CnnicConfig c;
  c.preset = Preset::Tiny;
  const auto model = random_model(c, 50);
  auto images = random_tensor<double>({4, 1, 28, 28}, 10, 0, 1);
  const auto out = cnnic_forward(images, model, Mode::Infer);
  for (std::size_t n = 0; n < 4; ++n) {
    std::vector<double> reversed(10, 0.0);
    for (std::size_t pos = 9; pos-- > 0;)
      for (std::size_t j = 0; j < 10; ++j) reversed[j] += out.logit_map.at({n, 0, pos, j}) / 9.0;
    const auto p = naive_softmax(reversed);
    double s = 0;
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_NEAR(out.probs.at({n, j}), p[j], 1e-14);
      s += out.probs.at({n, j});
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Predict, LowestIndexWinsTiesAndShiftInvariance) {
  Tensor<double> probs({2, 4}, {0.1, 0.4, 0.4, 0.1, 0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(predict(probs), (std::vector<int>{1, 0}));
  auto z = random_tensor({5, 10}, 11, -2, 2);
  Tensor<double> shifted = z;
  for (double& v : shifted.data()) v += 3.7;
  EXPECT_EQ(predict(softmax_rows(z)), predict(softmax_rows(shifted)));
}

// ---- weight sharing ------------------------------------------------------

TEST(WeightSharing, SharedKernelEqualsPerPositionCopies) {
  const CnnicConfig c = sharing_config();
  ASSERT_EQ(c.positions(), 4u);
  const auto model = random_model(c, 60, 0.5);
  auto images = random_tensor({3, 1, 8, 8}, 12, 0, 1);
  const std::vector<int> labels{1, 7, 4};
  const auto shared = shared_run(model, images, labels);
  const auto oracle = copy_oracle(model, images, labels);
  EXPECT_NEAR(shared.loss, oracle.loss, 1e-8);
  EXPECT_LT(max_abs_diff(shared.probs, oracle.probs), 1e-8);
  ASSERT_EQ(shared.grads.size(), oracle.grads.size());
  for (std::size_t i = 0; i < shared.grads.size(); ++i) {
    EXPECT_LT(max_abs_diff(shared.grads[i], oracle.grads[i]), 1e-8) << "tensor " << i;
  }
}

}  // namespace
}  // namespace cnnic
