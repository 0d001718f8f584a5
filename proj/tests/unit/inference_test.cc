#include "flamkit/inference.h"

#include <gtest/gtest.h>

#include <cmath>

namespace flamkit {
namespace {

TEST(ExactClassifier, HalfAtIndependence) {
  EXPECT_DOUBLE_EQ(exact_classifier(0.3, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(exact_classifier(0.6, 0.2), 0.75);
  EXPECT_THROW(exact_classifier(0.0, 0.5), InvalidArgument);
  EXPECT_THROW(exact_classifier(0.5, 1.0), InvalidArgument);
}

TEST(ExactClassifier, LogitFormMatchesProbabilityForm) {
  const double beta = -8.0;
  for (double r : {-5.0, -1.0, 0.0, 2.5, 8.0}) {
    const double p_post = sigmoid(r + beta), p_prior = sigmoid(beta);
    EXPECT_NEAR(exact_score_from_logit(beta, r), exact_classifier(p_post, p_prior), 1e-12) << r;
  }
  EXPECT_LT(approx_classifier_error(-8.0, 0.0), 1e-3);
}

TEST(FrameScores, SigmoidOfScaledCosine) {
  Matrix f(2, 2);
  f(0, 0) = 1.0;
  f(1, 1) = 1.0;
  const std::vector<double> p{1.0, 0.0};
  const auto s = frame_scores(f, p, 3.0);
  EXPECT_DOUBLE_EQ(s[0], sigmoid(3.0));
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(FrameScores, AlignedAndAntiAlignedAtScaleTen) {
  Matrix f(3, 2);
  f(0, 0) = 1.0;
  f(1, 0) = -1.0;
  f(2, 1) = 1.0;
  const std::vector<double> p{1.0, 0.0};
  const auto s = frame_scores(f, p, 10.0);
  EXPECT_NEAR(s[0], 0.9999546021312976, 1e-15);
  EXPECT_NEAR(s[1], 4.5397868702434395e-05, 1e-18);
  EXPECT_EQ(s[2], 0.5);
}

TEST(MedianFilter, ReplicatesEdgesAndRemovesSpikes) {
  const std::vector<double> x{0.9, 0.1, 0.1, 0.8, 0.1, 0.7, 0.7};
  EXPECT_EQ(median_filter(x, 3), (std::vector<double>{0.9, 0.1, 0.1, 0.1, 0.7, 0.7, 0.7}));
  EXPECT_EQ(median_filter(x, 1), x);
  EXPECT_THROW(median_filter(x, 2), InvalidArgument);
}

TEST(Timeline, MaximalRunsAboveThreshold) {
  const std::vector<double> s{0.2, 0.7, 0.8, 0.5, 0.9, 0.1};
  const auto seg = extract_timeline(s, 0.5, 1.0);
  ASSERT_EQ(seg.size(), 2u);
  EXPECT_DOUBLE_EQ(seg[0].onset, 1.0);
  EXPECT_DOUBLE_EQ(seg[0].offset, 3.0);
  EXPECT_DOUBLE_EQ(seg[0].score, 0.75);
  EXPECT_DOUBLE_EQ(seg[1].onset, 4.0);
  EXPECT_DOUBLE_EQ(seg[1].offset, 5.0);
}

TEST(Timeline, RunToTheEndAndRejectsBadThreshold) {
  const std::vector<double> s(kModelFrames, 0.9);
  const auto seg = extract_timeline(s);
  ASSERT_EQ(seg.size(), 1u);
  EXPECT_DOUBLE_EQ(seg[0].onset, 0.0);
  EXPECT_NEAR(seg[0].offset, 10.0, 1e-12);
  EXPECT_THROW(extract_timeline(s, 0.0), InvalidArgument);
  EXPECT_THROW(extract_timeline(s, 1.0), InvalidArgument);
  EXPECT_TRUE(extract_timeline(std::vector<double>(4, 0.2)).empty());
}

TEST(Timeline, JsonCarriesSegmentsAndScores) {
  const std::vector<double> s{0.1, 0.9};
  const auto j = timeline_to_json("a.wav", "dog", extract_timeline(s, 0.5, 1.0), s);
  EXPECT_EQ(j["prompt"], "dog");
  EXPECT_EQ(j["segments"].size(), 1u);
  EXPECT_EQ(j["frame_scores"].size(), 2u);
}

}  // namespace
}  // namespace flamkit
