// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_FEATURES_H_
#define FLAMKIT_FEATURES_H_

#include <span>
#include <vector>

#include "flamkit/dsp.h"
#include "flamkit/numcore.h"

namespace flamkit {

inline constexpr int kInternalRate = 16000;
inline constexpr std::size_t kStftWindow = 1024;
inline constexpr std::size_t kStftHop = 512;
inline constexpr std::size_t kMelBands = 64;
inline constexpr double kMelLowHz = 50.0;
inline constexpr double kMelHighHz = 8000.0;

// Model frame grid: 32 frames of 0.3125 s over the 10 s clip.
inline constexpr std::size_t kModelFrames = 32;
inline constexpr double kModelFrameSeconds = kClipSeconds / kModelFrames;

// 48 kHz -> 16 kHz: windowed-sinc lowpass (Blackman, 127 taps, cutoff 7.2 kHz)
// followed by keeping every third sample.
Waveform decimate_48k_to_16k(std::span<const double> x);

// HTK-mel triangular filters over the 513 rfft bins, kMelBands x 513.
Matrix mel_filterbank();

// log(1 + mel-pooled magnitude) per STFT frame (Hann window, no centering),
// one row per frame.
Matrix log_mel_spectrogram(std::span<const double> x16k);

// Full front end for a 10 s, 48 kHz clip: kModelFrames x kMelBands. STFT
// frames are averaged into the model frame containing their center time.
// Throws InvalidArgument for any other length.
Matrix audio_features(std::span<const double> wave48k);

}  // namespace flamkit

#endif  // FLAMKIT_FEATURES_H_
