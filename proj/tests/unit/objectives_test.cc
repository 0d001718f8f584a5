#include "flamkit/objectives.h"

#include <gtest/gtest.h>

#include <cmath>

#include "flamkit/encoders.h"

namespace flamkit {
namespace {


Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

TEST(ClipLoss, ClosedFormOrthogonalPairs) {
  // Logits are the identity: each row/column is log(1 + e^{-1}).
  const auto r = clip_loss(identity(2), identity(2), 0.0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-15);
  // With B pairs the negatives add (B-1) e^0 terms.
  const auto r3 = clip_loss(identity(3), identity(3), 0.0);
  EXPECT_NEAR(r3.loss, std::log(1.0 + 2.0 * std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(clip_loss(identity(1), identity(1), 2.0).loss, 0.0, 1e-15);
}

TEST(ClipLoss, OrthonormalPairsAtScaleTen) {
  EXPECT_NEAR(clip_loss(identity(2), identity(2), std::log(10.0)).loss, 4.539889921686465e-05, 1e-17);
}

TEST(SiglipLoss, ClosedForm) {
  const auto r = siglip_loss(identity(1), identity(1), 0.0, 0.0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-15);
  // Two orthogonal pairs, alpha 1, bias b: 2 positives at 1 + b, 2 negatives at b.
  const double b = -0.7;
  const auto r2 = siglip_loss(identity(2), identity(2), 0.0, b);
  const double expect = (2.0 * std::log1p(std::exp(-(1.0 + b))) + 2.0 * std::log1p(std::exp(b))) / 2.0;
  EXPECT_NEAR(r2.loss, expect, 1e-14);
}

TEST(SedLoss, ClosedFormTwoFrames) {
  const LabelTensor z = [] {
    LabelTensor t = make_label_tensor(1, 1, 2);
    t.at(0, 0, 0) = 1;
    t.at(0, 0, 1) = -1;
    t.clip_valid[0] = 1;
    t.prompt_valid[0] = 1;
    t.present[0] = 1;
    return t;
  }();
  Matrix frames(2, 2);
  frames(0, 0) = 1.0;
  frames(1, 1) = 1.0;
  Matrix prompts(1, 2);
  prompts(0, 0) = 1.0;
  const std::vector<double> la{std::log(2.0)}, beta{-1.0};
  // h = (2*1 - 1, 2*0 - 1) = (1, -1), labels (+1, -1): both log(1 + e^-1).
  const auto r = sed_loss(frames, prompts, la, beta, z);
  EXPECT_EQ(r.count, 2u);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-15);
  // dL/dbeta = mean(-z sigma(-z h)) = (-sigma(-1) + sigma(-1)) / 2 = 0.
  EXPECT_NEAR(r.grads.d_beta[0], 0.0, 1e-15);
}

TEST(SedLoss, SingleEntryAtInit) {
  LabelTensor z = make_label_tensor(1, 1, 1);
  z.at(0, 0, 0) = 1;
  z.clip_valid[0] = z.prompt_valid[0] = z.present[0] = 1;
  Matrix frame(1, 2), prompt(1, 2);
  frame(0, 0) = 1.0;
  prompt(0, 1) = 1.0;
  const std::vector<double> la{kInitLogScale}, beta{-8.0};
  // -log sigma(-8) = 8 + log(1 + e^-8).
  EXPECT_NEAR(sed_loss(frame, prompt, la, beta, z).loss, 8.000335406372896, 1e-14);
}

TEST(SedLoss, InvalidEntriesContributeNothing) {
  LabelTensor z = make_label_tensor(2, 1, 1);
  z.at(0, 0, 0) = 1;
  z.at(1, 0, 0) = -1;
  z.clip_valid = {1, 0};
  z.prompt_valid = {1};
  Matrix frames(2, 1, 1.0), prompts(1, 1, 1.0);
  const std::vector<double> la{0.0}, beta{0.0};
  const auto r = sed_loss(frames, prompts, la, beta, z);
  EXPECT_EQ(r.count, 1u);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_EQ(r.grads.d_frames(1, 0), 0.0);
}

TEST(PriorLoss, GradientIsSigmoidMinusRate) {
  const std::vector<double> beta{0.0, -2.0}, zb{0.25, 0.1};
  const auto r = prior_loss(beta, zb);
  EXPECT_NEAR(r.d_beta[0], (0.5 - 0.25) / 2.0, 1e-15);
  EXPECT_NEAR(r.d_beta[1], (sigmoid(-2.0) - 0.1) / 2.0, 1e-15);
  EXPECT_NEAR(r.loss, (std::log(2.0) + -(0.1 * log_sigmoid(-2.0) + 0.9 * log_sigmoid(2.0))) / 2.0, 1e-15);
  const std::vector<std::uint8_t> valid{1, 0};
  EXPECT_EQ(prior_loss(beta, zb, valid).d_beta[1], 0.0);
  const std::vector<double> bad{1.5, 0.0};
  EXPECT_THROW(prior_loss(beta, bad), InvalidArgument);
}

TEST(Zbar, FractionOfPositiveFrames) {
  LabelTensor z = make_label_tensor(2, 1, 4);
  for (auto& v : z.z) v = -1;
  z.at(0, 0, 0) = 1;
  z.at(1, 0, 3) = 1;
  z.clip_valid = {1, 1};
  z.prompt_valid = {1};
  EXPECT_DOUBLE_EQ(zbar(z)[0], 0.25);
}

TEST(CombineLosses, WeightedSumAndValidation) {
  const LossWeights w{1.0, 200.0, 1.0};
  EXPECT_DOUBLE_EQ(combine_losses(w, 1.0, 0.01, 0.5).total, 3.5);
  EXPECT_THROW(combine_losses({-1.0, 1.0, 1.0}, 0, 0, 0), InvalidArgument);
  EXPECT_THROW(validate_weights({1.0, std::nan(""), 1.0}), InvalidArgument);
}

TEST(Tabular, UniformWorldOptimumIsZero) {
  const TabularWorld w = uniform_tabular_world(4, 2);
  const Matrix cf = tabular_closed_form(w);
  for (double v : cf.data()) EXPECT_NEAR(v, 0.0, 1e-15);
  const TabularFit fit = tabular_sed_optimum(w, 1000);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(fit.max_abs_error, 1e-12);
}

TEST(Tabular, ClosedFormIsStationary) {
  Rng rng(4, streams::kTest, 0);
  const TabularWorld w = make_tabular_world(rng);
  const Matrix cf = tabular_closed_form(w);
  const double at = tabular_expected_loss(w, cf);
  Matrix moved = cf;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    moved.data()[i] += 1e-3;
    EXPECT_GT(tabular_expected_loss(w, moved), at);
    moved.data()[i] -= 2e-3;
    EXPECT_GT(tabular_expected_loss(w, moved), at);
    moved.data()[i] += 1e-3;
  }
}

TEST(SiglipBias, ApproachesNegativeLogBMinusOne) {
  const SiglipBiasFit fit = fit_siglip_bias(16, 16, 256, 3);
  EXPECT_DOUBLE_EQ(fit.target, -std::log(15.0));
  EXPECT_NEAR(fit.beta, fit.target, 0.1);
}

}  // namespace
}  // namespace flamkit
