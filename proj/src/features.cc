// SPDX-License-Identifier: Apache-2.0

#include "flamkit/features.h"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

namespace flamkit {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kDecimTaps = 127;
constexpr std::size_t kBins = kStftWindow / 2 + 1;

std::vector<double> decimation_taps() {
  const double cutoff = 7200.0 / kSampleRate;  // cycles per sample
  const double mid = (kDecimTaps - 1) / 2.0;
  std::vector<double> h(kDecimTaps);
  double sum = 0.0;
  for (std::size_t n = 0; n < kDecimTaps; ++n) {
    const double t = n - mid;
    const double sinc = t == 0.0 ? 2.0 * cutoff : std::sin(2.0 * kPi * cutoff * t) / (kPi * t);
    const double w = 0.42 - 0.5 * std::cos(2.0 * kPi * n / (kDecimTaps - 1)) +
                     0.08 * std::cos(4.0 * kPi * n / (kDecimTaps - 1));
    h[n] = sinc * w;
    sum += h[n];
  }
  for (double& v : h) v /= sum;
  return h;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// FFTW planning is not thread-safe; execution with new arrays is.
std::mutex& planner_mutex() {
  static std::mutex mu;
  return mu;
}

struct RealFft {
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  RealFft() {
    std::lock_guard lock(planner_mutex());
    in = fftw_alloc_real(kStftWindow);
    out = fftw_alloc_complex(kBins);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kStftWindow), in, out, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
};

RealFft& thread_fft() {
  thread_local RealFft fft;
  return fft;
}

}  // namespace

Waveform decimate_48k_to_16k(std::span<const double> x) {
  static const std::vector<double> h = decimation_taps();
  const std::size_t n_out = x.size() / 3;
  Waveform y(n_out, 0.0);
  const auto mid = static_cast<std::ptrdiff_t>((kDecimTaps - 1) / 2);
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    const auto center = static_cast<std::ptrdiff_t>(3 * m);
    double acc = 0.0;
    for (std::size_t k = 0; k < kDecimTaps; ++k) {
      const std::ptrdiff_t i = center + mid - static_cast<std::ptrdiff_t>(k);
      if (i >= 0 && i < n_in) acc += h[k] * x[static_cast<std::size_t>(i)];
    }
    y[m] = acc;
  }
  return y;
}

Matrix mel_filterbank() {
  Matrix fb(kMelBands, kBins, 0.0);
  const double lo = hz_to_mel(kMelLowHz);
  const double hi = hz_to_mel(kMelHighHz);
  std::vector<double> edges(kMelBands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (kMelBands + 1));
  }
  for (std::size_t b = 0; b < kMelBands; ++b) {
    const double f0 = edges[b], f1 = edges[b + 1], f2 = edges[b + 2];
    for (std::size_t k = 0; k < kBins; ++k) {
      const double f = static_cast<double>(k) * kInternalRate / kStftWindow;
      double w = 0.0;
      if (f > f0 && f <= f1) w = (f - f0) / (f1 - f0);
      else if (f > f1 && f < f2) w = (f2 - f) / (f2 - f1);
      fb(b, k) = w;
    }
  }
  return fb;
}

Matrix log_mel_spectrogram(std::span<const double> x16k) {
  static const Matrix fb = mel_filterbank();
  static const std::vector<double> window = [] {
    std::vector<double> w(kStftWindow);
    for (std::size_t n = 0; n < kStftWindow; ++n) w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / kStftWindow);
    return w;
  }();
  if (x16k.size() < kStftWindow) throw InvalidArgument("log_mel_spectrogram: input shorter than one window");
  const std::size_t frames = 1 + (x16k.size() - kStftWindow) / kStftHop;
  Matrix out(frames, kMelBands);
  RealFft& fft = thread_fft();
  std::vector<double> mag(kBins);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * kStftHop;
    for (std::size_t n = 0; n < kStftWindow; ++n) fft.in[n] = x16k[start + n] * window[n];
    fftw_execute_dft_r2c(fft.plan, fft.in, fft.out);
    for (std::size_t k = 0; k < kBins; ++k) mag[k] = std::hypot(fft.out[k][0], fft.out[k][1]);
    for (std::size_t b = 0; b < kMelBands; ++b) out(t, b) = std::log1p(dot(fb.row(b), mag));
  }
  return out;
}

Matrix audio_features(std::span<const double> wave48k) {
  if (wave48k.size() != kClipSamples) {
    throw InvalidArgument("expected a 10 s clip at 48 kHz (" + std::to_string(kClipSamples) + " samples), got " +
                          std::to_string(wave48k.size()) + "; resample or pad the input");
  }
  const Waveform x = decimate_48k_to_16k(wave48k);
  const Matrix spec = log_mel_spectrogram(x);
  Matrix pooled(kModelFrames, kMelBands, 0.0);
  std::vector<double> counts(kModelFrames, 0.0);
  for (std::size_t t = 0; t < spec.rows(); ++t) {
    const double center = (static_cast<double>(t * kStftHop) + kStftWindow / 2.0) / kInternalRate;
    const auto l = std::min<std::size_t>(kModelFrames - 1, static_cast<std::size_t>(center / kModelFrameSeconds));
    axpy(1.0, spec.row(t), pooled.row(l));
    counts[l] += 1.0;
  }
  for (std::size_t l = 0; l < kModelFrames; ++l) {
    if (counts[l] > 0.0) {
      for (double& v : pooled.row(l)) v /= counts[l];
    }
  }
  return pooled;
}

}  // namespace flamkit
