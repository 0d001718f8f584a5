// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_DSP_H_
#define FLAMKIT_DSP_H_

#include <array>
#include <span>
#include <string>
#include <vector>

namespace flamkit {

inline constexpr int kSampleRate = 48000;
inline constexpr double kClipSeconds = 10.0;
inline constexpr std::size_t kClipSamples = 480000;
// 50 Hz label grid: 960 samples per activity frame, 500 frames per clip.
inline constexpr int kLabelRate = 50;
inline constexpr std::size_t kLabelFrames = 500;
inline constexpr std::size_t kSamplesPerLabelFrame = kSampleRate / kLabelRate;

using Waveform = std::vector<double>;

// Second-order section, direct form II transposed. a0 is normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

// IEC 61672 A-weighting curve (4 zeros at DC, poles at 20.6 Hz (x2), 107.7 Hz,
// 737.9 Hz and 12194 Hz (x2)) mapped to the z-plane with the bilinear
// transform and normalized to unity gain at 1 kHz.
class AWeighting {
 public:
  explicit AWeighting(double sample_rate = kSampleRate);

  Waveform apply(std::span<const double> x) const;
  // Magnitude response in dB of the digital filter.
  double response_db(double freq_hz) const;

  const std::array<Biquad, 3>& sections() const { return sections_; }
  double gain() const { return gain_; }

 private:
  double sample_rate_;
  std::array<Biquad, 3> sections_;
  double gain_ = 1.0;
};

// Analog A-weighting in dB (closed-form IEC expression), for tests.
double a_weighting_analog_db(double freq_hz);

double rms(std::span<const double> x);
// 20 log10(rms); returns -inf for silence.
double rms_db(std::span<const double> x);
double a_weighted_rms_db(std::span<const double> x);
double db_to_gain(double db);
double gain_to_db(double gain);

// Biquad band-pass (constant peak gain), used by the procedural sources.
Biquad bandpass(double sample_rate, double center_hz, double q);
Biquad lowpass(double sample_rate, double cutoff_hz, double q = 0.7071);
Waveform filter(const Biquad& s, std::span<const double> x);

// Mono WAV I/O. Writes 32-bit IEEE float; reads IEEE float or 16-bit PCM.
struct WavData {
  int sample_rate = 0;
  Waveform samples;
};
void write_wav(const std::string& path, std::span<const double> samples,
               int sample_rate = kSampleRate);
std::vector<unsigned char> encode_wav(std::span<const double> samples,
                                      int sample_rate = kSampleRate);
WavData read_wav(const std::string& path);

}  // namespace flamkit

#endif  // FLAMKIT_DSP_H_
