// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_ENCODERS_H_
#define FLAMKIT_ENCODERS_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flamkit/features.h"
#include "flamkit/numcore.h"
#include "json.hpp"

namespace flamkit {

struct ModelConfig {
  std::size_t mel = kMelBands;
  // Appends the clip-mean of the normalized features to every frame input.
  bool clip_context = true;
  std::size_t audio_hidden = 128;
  std::size_t embed_dim = 64;
  std::size_t vocab = 4096;
  std::size_t text_hidden = 128;
  std::size_t head_hidden = 64;
  // false replaces the per-text head by one shared learnable scalar.
  bool per_text_scale = true;
  bool per_text_bias = true;

  std::size_t audio_input() const { return clip_context ? 2 * mel : mel; }
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

inline constexpr double kInitLogScale = 2.302585092994046;  // log 10
inline constexpr double kInitTextBias = -8.0;
inline constexpr double kInitScalarBias = -10.0;

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Flat parameter vector split into named row-major blocks. Gradients use a
// vector of the same length and layout.
class ParamStore {
 public:
  const ParamBlock& add(const std::string& name, std::size_t rows, std::size_t cols);
  bool has(const std::string& name) const { return index_.contains(name); }
  const ParamBlock& block(const std::string& name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;
  static std::span<double> view(std::vector<double>& flat, const ParamBlock& b) {
    return {flat.data() + b.offset, b.size()};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  std::vector<double> zeros() const { return std::vector<double>(values_.size(), 0.0); }

 private:
  std::vector<ParamBlock> blocks_;
  std::map<std::string, std::size_t> index_;
  std::vector<double> values_;
};

// Parameter groups used for gradient norms and gradient checks.
inline const std::vector<std::string> kParamGroups = {"audio", "text", "scale_head", "bias_head",
                                                      "clip", "ablation"};

// L2 norm of g restricted to blocks whose name starts with "<group>.".
double group_norm(const ParamStore& store, std::span<const double> g, const std::string& group);

// Lowercase, split on non-alphanumeric, FNV-1a into `vocab` buckets.
// Returns (bucket, count) sorted by bucket. Throws InvalidArgument when the
// caption has no tokens.
std::vector<std::pair<std::size_t, double>> hash_tokens(const std::string& caption, std::size_t vocab);

struct AudioForward {
  Matrix input;    // L x audio_input, normalized
  Matrix h1, h2;   // L x audio_hidden, post-tanh
  Matrix proj;     // L x d, before normalization
  std::vector<double> proj_norm;
  Matrix frames;   // L x d, unit rows
  std::vector<double> mean;  // unnormalized mean of frame rows
  double mean_norm = 0.0;
  std::vector<double> global;  // unit
};

struct TextForward {
  std::vector<std::pair<std::size_t, double>> tokens;
  std::vector<double> t1, features;  // text_hidden, post-tanh
  std::vector<double> proj;
  double proj_norm = 0.0;
  std::vector<double> embedding;  // unit
  std::vector<double> scale_hidden, bias_hidden;
  double log_alpha = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

class Model {
 public:
  Model() = default;
  // Random trunk weights from (seed, kInit); head contract exact at init.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Per-band input normalization; stored as parameters that never receive
  // gradient.
  void set_feature_normalization(std::span<const double> mean, std::span<const double> stddev);

  AudioForward encode_audio_features(const Matrix& features) const;
  AudioForward encode_audio(std::span<const double> wave48k) const;
  // Accumulates into grad (same layout as params()).
  void audio_backward(const AudioForward& fw, const Matrix& d_frames, std::span<const double> d_global,
                      std::vector<double>& grad) const;

  TextForward encode_text(const std::string& caption) const;
  // d_log_alpha flows into the scale head (or the scalar) and the text trunk;
  // d_beta flows into the bias head parameters only (or the scalar).
  void text_backward(const TextForward& fw, std::span<const double> d_embedding, double d_log_alpha,
                     double d_beta, std::vector<double>& grad) const;

  double clip_log_scale() const { return params_.view("clip.logit_scale")[0]; }
  const ParamBlock& clip_scale_block() const { return params_.block("clip.logit_scale"); }

 private:
  void build_layout();

  ModelConfig config_;
  ParamStore params_;
};

// Binary checkpoint: "FLMK", u32 version, u32 block count, then per block
// u32 name length, name bytes, u32 ndim, u32 dims, float32 LE row-major data.
// A "meta.config_hash" block stores the run hash as four 16-bit chunks and
// "meta.model" the model configuration.
struct Checkpoint {
  Model model;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t config_hash);
Checkpoint load_checkpoint(const std::string& path);

// Raw block I/O shared with the embedding cache.
struct NamedBlock {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};
void write_blocks(const std::string& path, const std::vector<NamedBlock>& blocks);
std::vector<NamedBlock> read_blocks(const std::string& path);

}  // namespace flamkit

#endif  // FLAMKIT_ENCODERS_H_
