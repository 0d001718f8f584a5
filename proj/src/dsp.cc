// SPDX-License-Identifier: Apache-2.0

#include "flamkit/dsp.h"

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "flamkit/numcore.h"

namespace flamkit {

namespace {

constexpr double kPi = std::numbers::pi;

// Bilinear transform of (n2 s^2 + n1 s + n0) / (d2 s^2 + d1 s + d0).
Biquad bilinear(double n2, double n1, double n0, double d2, double d1, double d0,
                double fs) {
  const double k = 2.0 * fs;
  const double k2 = k * k;
  const double a0 = d2 * k2 + d1 * k + d0;
  Biquad s;
  s.b0 = (n2 * k2 + n1 * k + n0) / a0;
  s.b1 = (-2.0 * n2 * k2 + 2.0 * n0) / a0;
  s.b2 = (n2 * k2 - n1 * k + n0) / a0;
  s.a1 = (-2.0 * d2 * k2 + 2.0 * d0) / a0;
  s.a2 = (d2 * k2 - d1 * k + d0) / a0;
  return s;
}

std::complex<double> section_response(const Biquad& s, double w) {
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

}  // namespace

AWeighting::AWeighting(double sample_rate) : sample_rate_(sample_rate) {
  const double w1 = 2.0 * kPi * 20.598997;
  const double w2 = 2.0 * kPi * 107.65265;
  const double w3 = 2.0 * kPi * 737.86223;
  const double w4 = 2.0 * kPi * 12194.217;
  sections_[0] = bilinear(1, 0, 0, 1, 2 * w1, w1 * w1, sample_rate);
  sections_[1] = bilinear(1, 0, 0, 1, w2 + w3, w2 * w3, sample_rate);
  sections_[2] = bilinear(0, 0, 1, 1, 2 * w4, w4 * w4, sample_rate);
  gain_ = 1.0;
  gain_ = 1.0 / std::pow(10.0, response_db(1000.0) / 20.0);
}

double AWeighting::response_db(double freq_hz) const {
  const double w = 2.0 * kPi * freq_hz / sample_rate_;
  std::complex<double> h = gain_;
  for (const Biquad& s : sections_) h *= section_response(s, w);
  return 20.0 * std::log10(std::abs(h));
}

Waveform AWeighting::apply(std::span<const double> x) const {
  // Cascade evaluated sample by sample; avoids one buffer per section.
  Waveform y(x.size());
  double z[3][2] = {};
  for (std::size_t n = 0; n < x.size(); ++n) {
    double v = x[n];
    for (std::size_t k = 0; k < 3; ++k) {
      const Biquad& s = sections_[k];
      const double out = s.b0 * v + z[k][0];
      z[k][0] = s.b1 * v - s.a1 * out + z[k][1];
      z[k][1] = s.b2 * v - s.a2 * out;
      v = out;
    }
    y[n] = v * gain_;
  }
  return y;
}

double a_weighting_analog_db(double f) {
  const double f2 = f * f;
  const double num = 12194.0 * 12194.0 * f2 * f2;
  const double den = (f2 + 20.6 * 20.6) *
                     std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)) *
                     (f2 + 12194.0 * 12194.0);
  return 20.0 * std::log10(num / den) + 2.0;
}

Waveform filter(const Biquad& s, std::span<const double> x) {
  Waveform y(x.size());
  double z1 = 0.0, z2 = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double in = x[n];
    const double out = s.b0 * in + z1;
    z1 = s.b1 * in - s.a1 * out + z2;
    z2 = s.b2 * in - s.a2 * out;
    y[n] = out;
  }
  return y;
}

Biquad bandpass(double fs, double center_hz, double q) {
  const double w0 = 2.0 * kPi * center_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = alpha / a0;
  s.b1 = 0.0;
  s.b2 = -alpha / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

Biquad lowpass(double fs, double cutoff_hz, double q) {
  const double w0 = 2.0 * kPi * cutoff_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = (1.0 - c) / 2.0 / a0;
  s.b1 = (1.0 - c) / a0;
  s.b2 = (1.0 - c) / 2.0 / a0;
  s.a1 = -2.0 * c / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double rms_db(std::span<const double> x) { return gain_to_db(rms(x)); }

double a_weighted_rms_db(std::span<const double> x) {
  static const AWeighting weighting;
  return rms_db(weighting.apply(x));
}

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

double gain_to_db(double gain) {
  if (gain <= 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(gain);
}

// --- WAV ---------------------------------------------------------------------

namespace {

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_tag(std::vector<unsigned char>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

std::vector<unsigned char> encode_wav(std::span<const double> samples, int sample_rate) {
  const auto n = static_cast<std::uint32_t>(samples.size());
  const std::uint32_t data_bytes = n * 4;
  std::vector<unsigned char> b;
  b.reserve(58 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 4 + (8 + 18) + (8 + 4) + (8 + data_bytes));
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 18);
  put_u16(b, kFormatFloat);
  put_u16(b, 1);
  put_u32(b, static_cast<std::uint32_t>(sample_rate));
  put_u32(b, static_cast<std::uint32_t>(sample_rate) * 4);
  put_u16(b, 4);
  put_u16(b, 32);
  put_u16(b, 0);
  put_tag(b, "fact");
  put_u32(b, 4);
  put_u32(b, n);
  put_tag(b, "data");
  put_u32(b, data_bytes);
  for (double s : samples) {
    const float f = static_cast<float>(s);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(b, bits);
  }
  return b;
}

void write_wav(const std::string& path, std::span<const double> samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw IoError("not a RIFF/WAVE file: " + path);
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw IoError("truncated chunk in: " + path);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw IoError("short fmt chunk in: " + path);
      format = get_u16(buf.data() + body);
      channels = get_u16(buf.data() + body + 2);
      rate = get_u32(buf.data() + body + 4);
      bits = get_u16(buf.data() + body + 14);
      if (format == kFormatExtensible && size >= 40) format = get_u16(buf.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (data == nullptr || format == 0) throw IoError("missing fmt or data chunk: " + path);
  if (channels != 1) throw IoError("expected mono audio: " + path);

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  if (format == kFormatFloat && bits == 32) {
    out.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const std::uint32_t u = get_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      out.samples[i] = f;
    }
  } else if (format == kFormatPcm && bits == 16) {
    out.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const auto s = static_cast<std::int16_t>(get_u16(data + 2 * i));
      out.samples[i] = s / 32768.0;
    }
  } else {
    throw IoError("unsupported sample format in: " + path);
  }
  return out;
}

}  // namespace flamkit
