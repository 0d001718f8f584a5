#include "flamkit/features.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace flamkit {
namespace {

Waveform sine48k(double hz, double amp = 0.5) {
  Waveform x(kClipSamples);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate);
  return x;
}

double rms(std::span<const double> x, std::size_t skip) {
  double acc = 0.0;
  for (std::size_t i = skip; i < x.size() - skip; ++i) acc += x[i] * x[i];
  return std::sqrt(acc / static_cast<double>(x.size() - 2 * skip));
}

TEST(Decimate, KeepsPassbandRejectsAlias) {
  const auto pass = decimate_48k_to_16k(sine48k(1000.0));
  ASSERT_EQ(pass.size(), kClipSamples / 3);
  EXPECT_NEAR(rms(pass, 200), 0.5 / std::sqrt(2.0), 0.01);
  // 12 kHz would fold onto 4 kHz without the lowpass.
  const auto stop = decimate_48k_to_16k(sine48k(12000.0));
  EXPECT_LT(rms(stop, 200), 1e-3);
}

TEST(MelFilterbank, ShapeAndCoverage) {
  const Matrix fb = mel_filterbank();
  ASSERT_EQ(fb.rows(), kMelBands);
  ASSERT_EQ(fb.cols(), kStftWindow / 2 + 1);
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    double peak = 0.0;
    for (double v : fb.row(m)) {
      EXPECT_GE(v, 0.0);
      peak = std::max(peak, v);
    }
    EXPECT_GT(peak, 0.0) << "empty band " << m;
  }
}

TEST(AudioFeatures, ShapeAndLengthContract) {
  const Matrix f = audio_features(sine48k(440.0));
  EXPECT_EQ(f.rows(), kModelFrames);
  EXPECT_EQ(f.cols(), kMelBands);
  EXPECT_THROW(audio_features(Waveform(kClipSamples - 1, 0.0)), InvalidArgument);
}

TEST(AudioFeatures, ToneEnergyRisesWithPitch) {
  auto argmax_band = [](const Matrix& f) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < f.cols(); ++m) {
      if (f(10, m) > f(10, best)) best = m;
    }
    return best;
  };
  const std::size_t low = argmax_band(audio_features(sine48k(300.0)));
  const std::size_t high = argmax_band(audio_features(sine48k(3000.0)));
  EXPECT_LT(low + 10, high);
}

TEST(AudioFeatures, SilenceIsZero) {
  const Matrix f = audio_features(Waveform(kClipSamples, 0.0));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace flamkit
