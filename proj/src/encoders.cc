// SPDX-License-Identifier: Apache-2.0

#include "flamkit/encoders.h"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flamkit/rng.h"

namespace flamkit {

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"mel", c.mel},
          {"clip_context", c.clip_context},
          {"audio_hidden", c.audio_hidden},
          {"embed_dim", c.embed_dim},
          {"vocab", c.vocab},
          {"text_hidden", c.text_hidden},
          {"head_hidden", c.head_hidden},
          {"per_text_scale", c.per_text_scale},
          {"per_text_bias", c.per_text_bias}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.mel = j.value("mel", c.mel);
  c.clip_context = j.value("clip_context", c.clip_context);
  c.audio_hidden = j.value("audio_hidden", c.audio_hidden);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.vocab = j.value("vocab", c.vocab);
  c.text_hidden = j.value("text_hidden", c.text_hidden);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.per_text_scale = j.value("per_text_scale", c.per_text_scale);
  c.per_text_bias = j.value("per_text_bias", c.per_text_bias);
  if (c.mel == 0 || c.audio_hidden == 0 || c.embed_dim == 0 || c.vocab == 0 || c.text_hidden == 0 ||
      c.head_hidden == 0) {
    throw InvalidArgument("model config: all dimensions must be positive");
  }
  return c;
}

const ParamBlock& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
  if (index_.contains(name)) throw InvalidArgument("duplicate parameter block: " + name);
  ParamBlock b{name, values_.size(), rows, cols};
  values_.resize(values_.size() + b.size(), 0.0);
  index_[name] = blocks_.size();
  blocks_.push_back(b);
  return blocks_.back();
}

const ParamBlock& ParamStore::block(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter block: " + name);
  return blocks_[it->second];
}

std::span<double> ParamStore::view(const std::string& name) {
  const ParamBlock& b = block(name);
  return {values_.data() + b.offset, b.size()};
}

std::span<const double> ParamStore::view(const std::string& name) const {
  const ParamBlock& b = block(name);
  return {values_.data() + b.offset, b.size()};
}

double group_norm(const ParamStore& store, std::span<const double> g, const std::string& group) {
  const std::string prefix = group + ".";
  double ss = 0.0;
  for (const ParamBlock& b : store.blocks()) {
    if (b.name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < b.size(); ++i) ss += g[b.offset + i] * g[b.offset + i];
  }
  return std::sqrt(ss);
}

std::vector<std::pair<std::size_t, double>> hash_tokens(const std::string& caption, std::size_t vocab) {
  std::map<std::size_t, double> counts;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::uint32_t h = 2166136261u;
    for (unsigned char ch : token) {
      h ^= ch;
      h *= 16777619u;
    }
    counts[h % vocab] += 1.0;
    token.clear();
  };
  for (unsigned char ch : caption) {
    if (std::isalnum(ch)) {
      token.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  if (counts.empty()) throw InvalidArgument("caption has no tokens: \"" + caption + "\"");
  return {counts.begin(), counts.end()};
}

namespace {

// y = W x + b for one input row; W is rows x cols row-major.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    y[r] = b[r] + dot(w.subspan(r * cols, cols), x);
  }
}

// Given dy for y = W x + b, accumulates dW, db and (if non-empty) dx.
void affine_backward(std::span<const double> w, std::span<const double> x, std::span<const double> dy,
                     std::span<double> dw, std::span<double> db, std::span<double> dx) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < dy.size(); ++r) {
    if (dy[r] == 0.0) continue;
    axpy(dy[r], x, dw.subspan(r * cols, cols));
    if (!db.empty()) db[r] += dy[r];
    if (!dx.empty()) axpy(dy[r], w.subspan(r * cols, cols), dx);
  }
}

void tanh_inplace(std::span<double> v) {
  for (double& x : v) x = std::tanh(x);
}

// dz = dy * (1 - y^2) for y = tanh(z)
std::vector<double> tanh_backward(std::span<const double> y, std::span<const double> dy) {
  std::vector<double> dz(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dz[i] = dy[i] * (1.0 - y[i] * y[i]);
  return dz;
}

std::span<const double> cview(const std::vector<double>& flat, const ParamBlock& b) {
  return {flat.data() + b.offset, b.size()};
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  build_layout();
  const Rng root(seed, streams::kInit);
  std::uint64_t idx = 0;
  auto init = [&](const std::string& name, double stddev) {
    Rng rng = root.substream(++idx);
    for (double& v : params_.view(name)) v = stddev * rng.normal();
  };
  const auto& c = config_;
  init("audio.w1", 1.0 / std::sqrt(static_cast<double>(c.audio_input())));
  init("audio.w2", 1.0 / std::sqrt(static_cast<double>(c.audio_hidden)));
  init("audio.proj", 1.0 / std::sqrt(static_cast<double>(c.audio_hidden)));
  // Bag-of-words inputs have only a handful of non-zero counts.
  init("text.w1", 0.5);
  init("text.w2", 1.0 / std::sqrt(static_cast<double>(c.text_hidden)));
  init("text.proj", 1.0 / std::sqrt(static_cast<double>(c.text_hidden)));
  init("scale_head.w1", 1.0 / std::sqrt(static_cast<double>(c.text_hidden)));
  init("bias_head.w1", 1.0 / std::sqrt(static_cast<double>(c.text_hidden)));
  // Last layers: zero weights so the head output equals its bias at init.
  params_.view("scale_head.b2")[0] = kInitLogScale;
  params_.view("bias_head.b2")[0] = kInitTextBias;
  params_.view("clip.logit_scale")[0] = kInitLogScale;
  params_.view("ablation.scale")[0] = kInitLogScale;
  params_.view("ablation.bias")[0] = kInitScalarBias;
  for (double& v : params_.view("audio.norm_std")) v = 1.0;
}

void Model::build_layout() {
  const auto& c = config_;
  params_.add("audio.norm_mean", 1, c.mel);
  params_.add("audio.norm_std", 1, c.mel);
  params_.add("audio.w1", c.audio_hidden, c.audio_input());
  params_.add("audio.b1", 1, c.audio_hidden);
  params_.add("audio.w2", c.audio_hidden, c.audio_hidden);
  params_.add("audio.b2", 1, c.audio_hidden);
  params_.add("audio.proj", c.embed_dim, c.audio_hidden);
  params_.add("text.w1", c.text_hidden, c.vocab);
  params_.add("text.b1", 1, c.text_hidden);
  params_.add("text.w2", c.text_hidden, c.text_hidden);
  params_.add("text.b2", 1, c.text_hidden);
  params_.add("text.proj", c.embed_dim, c.text_hidden);
  for (const std::string head : {"scale_head", "bias_head"}) {
    params_.add(head + ".w1", c.head_hidden, c.text_hidden);
    params_.add(head + ".b1", 1, c.head_hidden);
    params_.add(head + ".w2", 1, c.head_hidden);
    params_.add(head + ".b2", 1, 1);
  }
  params_.add("clip.logit_scale", 1, 1);
  params_.add("ablation.scale", 1, 1);
  params_.add("ablation.bias", 1, 1);
}

void Model::set_feature_normalization(std::span<const double> mean, std::span<const double> stddev) {
  if (mean.size() != config_.mel || stddev.size() != config_.mel) {
    throw InvalidArgument("feature normalization: expected " + std::to_string(config_.mel) + " bands");
  }
  auto m = params_.view("audio.norm_mean");
  auto s = params_.view("audio.norm_std");
  for (std::size_t j = 0; j < config_.mel; ++j) {
    if (!(stddev[j] > 0.0)) throw InvalidArgument("feature normalization: stddev must be positive");
    m[j] = mean[j];
    s[j] = stddev[j];
  }
}

AudioForward Model::encode_audio(std::span<const double> wave48k) const {
  return encode_audio_features(audio_features(wave48k));
}

AudioForward Model::encode_audio_features(const Matrix& features) const {
  const auto& c = config_;
  if (features.cols() != c.mel || features.rows() == 0) {
    throw InvalidArgument("audio features: expected L x " + std::to_string(c.mel));
  }
  const std::size_t L = features.rows();
  const auto& p = params_.values();
  const auto mean = params_.view("audio.norm_mean");
  const auto sd = params_.view("audio.norm_std");

  AudioForward fw;
  fw.input = Matrix(L, c.audio_input());
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t j = 0; j < c.mel; ++j) fw.input(l, j) = (features(l, j) - mean[j]) / sd[j];
  }
  if (c.clip_context) {
    for (std::size_t j = 0; j < c.mel; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < L; ++l) acc += fw.input(l, j);
      for (std::size_t l = 0; l < L; ++l) fw.input(l, c.mel + j) = acc / static_cast<double>(L);
    }
  }

  const auto w1 = cview(p, params_.block("audio.w1"));
  const auto b1 = cview(p, params_.block("audio.b1"));
  const auto w2 = cview(p, params_.block("audio.w2"));
  const auto b2 = cview(p, params_.block("audio.b2"));
  const auto pr = cview(p, params_.block("audio.proj"));
  const std::vector<double> zero_bias(c.embed_dim, 0.0);

  fw.h1 = Matrix(L, c.audio_hidden);
  fw.h2 = Matrix(L, c.audio_hidden);
  fw.proj = Matrix(L, c.embed_dim);
  fw.frames = Matrix(L, c.embed_dim);
  fw.proj_norm.resize(L);
  fw.mean.assign(c.embed_dim, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    affine(w1, b1, fw.input.row(l), fw.h1.row(l));
    tanh_inplace(fw.h1.row(l));
    affine(w2, b2, fw.h1.row(l), fw.h2.row(l));
    tanh_inplace(fw.h2.row(l));
    affine(pr, zero_bias, fw.h2.row(l), fw.proj.row(l));
    fw.proj_norm[l] = norm2(fw.proj.row(l));
    const auto unit = l2_normalize(fw.proj.row(l));
    std::copy(unit.begin(), unit.end(), fw.frames.row(l).begin());
    axpy(1.0 / static_cast<double>(L), unit, fw.mean);
  }
  fw.mean_norm = norm2(fw.mean);
  fw.global = l2_normalize(fw.mean);
  return fw;
}

void Model::audio_backward(const AudioForward& fw, const Matrix& d_frames, std::span<const double> d_global,
                           std::vector<double>& grad) const {
  const auto& c = config_;
  const std::size_t L = fw.frames.rows();
  if (grad.size() != params_.size()) throw InvalidArgument("audio_backward: gradient size mismatch");
  const auto& p = params_.values();
  const auto& bw1 = params_.block("audio.w1");
  const auto& bw2 = params_.block("audio.w2");
  const auto& bpr = params_.block("audio.proj");
  auto gw1 = ParamStore::view(grad, bw1);
  auto gb1 = ParamStore::view(grad, params_.block("audio.b1"));
  auto gw2 = ParamStore::view(grad, bw2);
  auto gb2 = ParamStore::view(grad, params_.block("audio.b2"));
  auto gpr = ParamStore::view(grad, bpr);

  std::vector<double> d_mean;
  if (!d_global.empty()) d_mean = l2_normalize_backward(fw.global, fw.mean_norm, d_global);

  std::vector<double> d_row(c.embed_dim);
  for (std::size_t l = 0; l < L; ++l) {
    if (!d_frames.empty()) {
      std::copy(d_frames.row(l).begin(), d_frames.row(l).end(), d_row.begin());
    } else {
      std::fill(d_row.begin(), d_row.end(), 0.0);
    }
    if (!d_mean.empty()) axpy(1.0 / static_cast<double>(L), d_mean, d_row);
    const auto d_proj = l2_normalize_backward(fw.frames.row(l), fw.proj_norm[l], d_row);
    std::vector<double> d_h2(c.audio_hidden, 0.0);
    affine_backward(cview(p, bpr), fw.h2.row(l), d_proj, gpr, {}, d_h2);
    const auto d_z2 = tanh_backward(fw.h2.row(l), d_h2);
    std::vector<double> d_h1(c.audio_hidden, 0.0);
    affine_backward(cview(p, bw2), fw.h1.row(l), d_z2, gw2, gb2, d_h1);
    const auto d_z1 = tanh_backward(fw.h1.row(l), d_h1);
    affine_backward(cview(p, bw1), fw.input.row(l), d_z1, gw1, gb1, {});
  }
}

TextForward Model::encode_text(const std::string& caption) const {
  const auto& c = config_;
  const auto& p = params_.values();
  TextForward fw;
  fw.tokens = hash_tokens(caption, c.vocab);

  const auto w1 = cview(p, params_.block("text.w1"));
  const auto b1 = cview(p, params_.block("text.b1"));
  fw.t1.assign(b1.begin(), b1.end());
  for (std::size_t r = 0; r < c.text_hidden; ++r) {
    for (const auto& [bucket, count] : fw.tokens) fw.t1[r] += w1[r * c.vocab + bucket] * count;
  }
  tanh_inplace(fw.t1);
  fw.features.resize(c.text_hidden);
  affine(cview(p, params_.block("text.w2")), cview(p, params_.block("text.b2")), fw.t1, fw.features);
  tanh_inplace(fw.features);
  fw.proj.resize(c.embed_dim);
  const std::vector<double> zero_bias(c.embed_dim, 0.0);
  affine(cview(p, params_.block("text.proj")), zero_bias, fw.features, fw.proj);
  fw.proj_norm = norm2(fw.proj);
  fw.embedding = l2_normalize(fw.proj);

  auto head = [&](const std::string& name, std::vector<double>& hidden) {
    hidden.resize(c.head_hidden);
    affine(cview(p, params_.block(name + ".w1")), cview(p, params_.block(name + ".b1")), fw.features, hidden);
    tanh_inplace(hidden);
    return params_.view(name + ".b2")[0] + dot(params_.view(name + ".w2"), hidden);
  };
  fw.log_alpha = c.per_text_scale ? head("scale_head", fw.scale_hidden) : params_.view("ablation.scale")[0];
  fw.alpha = scale_from_log(fw.log_alpha);
  fw.beta = c.per_text_bias ? head("bias_head", fw.bias_hidden) : params_.view("ablation.bias")[0];
  return fw;
}

void Model::text_backward(const TextForward& fw, std::span<const double> d_embedding, double d_log_alpha,
                          double d_beta, std::vector<double>& grad) const {
  const auto& c = config_;
  if (grad.size() != params_.size()) throw InvalidArgument("text_backward: gradient size mismatch");
  const auto& p = params_.values();
  std::vector<double> d_feat(c.text_hidden, 0.0);

  if (!d_embedding.empty()) {
    const auto d_proj = l2_normalize_backward(fw.embedding, fw.proj_norm, d_embedding);
    const auto& b = params_.block("text.proj");
    affine_backward(cview(p, b), fw.features, d_proj, ParamStore::view(grad, b), {}, d_feat);
  }

  // Head backward; the scale head also feeds the trunk, the bias head never
  // does.
  auto head_backward = [&](const std::string& name, const std::vector<double>& hidden, double d_out,
                           bool into_trunk) {
    const auto& bw2 = params_.block(name + ".w2");
    grad[params_.block(name + ".b2").offset] += d_out;
    axpy(d_out, hidden, ParamStore::view(grad, bw2));
    std::vector<double> d_hidden(c.head_hidden);
    const auto w2 = cview(p, bw2);
    for (std::size_t i = 0; i < c.head_hidden; ++i) d_hidden[i] = d_out * w2[i];
    const auto d_z = tanh_backward(hidden, d_hidden);
    const auto& bw1 = params_.block(name + ".w1");
    std::span<double> dx = into_trunk ? std::span<double>(d_feat) : std::span<double>();
    affine_backward(cview(p, bw1), fw.features, d_z, ParamStore::view(grad, bw1),
                    ParamStore::view(grad, params_.block(name + ".b1")), dx);
  };

  if (d_log_alpha != 0.0) {
    if (c.per_text_scale) {
      head_backward("scale_head", fw.scale_hidden, d_log_alpha, true);
    } else {
      grad[params_.block("ablation.scale").offset] += d_log_alpha;
    }
  }
  if (d_beta != 0.0) {
    if (c.per_text_bias) {
      head_backward("bias_head", fw.bias_hidden, d_beta, false);
    } else {
      grad[params_.block("ablation.bias").offset] += d_beta;
    }
  }

  const auto d_z2 = tanh_backward(fw.features, d_feat);
  std::vector<double> d_t1(c.text_hidden, 0.0);
  const auto& bw2 = params_.block("text.w2");
  affine_backward(cview(p, bw2), fw.t1, d_z2, ParamStore::view(grad, bw2),
                  ParamStore::view(grad, params_.block("text.b2")), d_t1);
  const auto d_z1 = tanh_backward(fw.t1, d_t1);
  auto gw1 = ParamStore::view(grad, params_.block("text.w1"));
  auto gb1 = ParamStore::view(grad, params_.block("text.b1"));
  for (std::size_t r = 0; r < c.text_hidden; ++r) {
    if (d_z1[r] == 0.0) continue;
    gb1[r] += d_z1[r];
    for (const auto& [bucket, count] : fw.tokens) gw1[r * c.vocab + bucket] += d_z1[r] * count;
  }
}

// ---------------------------------------------------------------------------
// Block file format.

namespace {

constexpr char kMagic[4] = {'F', 'L', 'M', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated block file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_blocks(const std::string& path, const std::vector<NamedBlock>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(blocks.size()));
  for (const NamedBlock& b : blocks) {
    std::size_t n = 1;
    for (auto d : b.shape) n *= d;
    if (n != b.data.size()) throw InvalidArgument("block " + b.name + ": shape does not match data");
    put_u32(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_u32(os, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put_u32(os, d);
    for (float f : b.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<NamedBlock> read_blocks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a FLMK file: " + path);
  const std::uint32_t version = get_u32(is, path);
  if (version != kFormatVersion) throw IoError("unsupported FLMK version " + std::to_string(version));
  const std::uint32_t count = get_u32(is, path);
  std::vector<NamedBlock> blocks(count);
  for (NamedBlock& b : blocks) {
    const std::uint32_t len = get_u32(is, path);
    if (len > (1u << 16)) throw IoError("corrupt block name length in " + path);
    b.name.resize(len);
    if (!is.read(b.name.data(), len)) throw IoError("truncated block file: " + path);
    const std::uint32_t ndim = get_u32(is, path);
    if (ndim > 8) throw IoError("corrupt block rank in " + path);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      b.shape.push_back(get_u32(is, path));
      n *= b.shape.back();
    }
    if (n > (std::size_t{1} << 28)) throw IoError("corrupt block size in " + path);
    b.data.resize(n);
    for (float& f : b.data) f = std::bit_cast<float>(get_u32(is, path));
  }
  return blocks;
}

namespace {

std::vector<float> model_meta(const ModelConfig& c) {
  return {static_cast<float>(c.mel),         static_cast<float>(c.clip_context),
          static_cast<float>(c.audio_hidden), static_cast<float>(c.embed_dim),
          static_cast<float>(c.vocab),        static_cast<float>(c.text_hidden),
          static_cast<float>(c.head_hidden),  static_cast<float>(c.per_text_scale),
          static_cast<float>(c.per_text_bias)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t config_hash) {
  std::vector<NamedBlock> blocks;
  NamedBlock hash{"meta.config_hash", {4}, {}};
  for (int i = 0; i < 4; ++i) hash.data.push_back(static_cast<float>((config_hash >> (16 * i)) & 0xffff));
  blocks.push_back(hash);
  const auto meta = model_meta(model.config());
  blocks.push_back({"meta.model", {static_cast<std::uint32_t>(meta.size())}, meta});
  const auto& values = model.params().values();
  for (const ParamBlock& b : model.params().blocks()) {
    NamedBlock nb{b.name, {static_cast<std::uint32_t>(b.rows), static_cast<std::uint32_t>(b.cols)}, {}};
    nb.data.reserve(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) nb.data.push_back(static_cast<float>(values[b.offset + i]));
    blocks.push_back(std::move(nb));
  }
  write_blocks(path, blocks);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto blocks = read_blocks(path);
  std::map<std::string, const NamedBlock*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b;
  auto need = [&](const std::string& name) -> const NamedBlock& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint " + path + " lacks block " + name);
    return *it->second;
  };
  const auto& meta = need("meta.model").data;
  if (meta.size() != 9) throw IoError("checkpoint " + path + ": bad meta.model block");
  ModelConfig c;
  c.mel = static_cast<std::size_t>(meta[0]);
  c.clip_context = meta[1] != 0.0f;
  c.audio_hidden = static_cast<std::size_t>(meta[2]);
  c.embed_dim = static_cast<std::size_t>(meta[3]);
  c.vocab = static_cast<std::size_t>(meta[4]);
  c.text_hidden = static_cast<std::size_t>(meta[5]);
  c.head_hidden = static_cast<std::size_t>(meta[6]);
  c.per_text_scale = meta[7] != 0.0f;
  c.per_text_bias = meta[8] != 0.0f;

  Checkpoint ck;
  ck.model = Model(c, 0);
  const auto& hash = need("meta.config_hash").data;
  if (hash.size() != 4) throw IoError("checkpoint " + path + ": bad meta.config_hash block");
  for (int i = 0; i < 4; ++i) ck.config_hash |= static_cast<std::uint64_t>(hash[i]) << (16 * i);
  auto& values = ck.model.params().values();
  for (const ParamBlock& b : ck.model.params().blocks()) {
    const NamedBlock& nb = need(b.name);
    if (nb.data.size() != b.size()) throw IoError("checkpoint " + path + ": shape mismatch for " + b.name);
    for (std::size_t i = 0; i < b.size(); ++i) values[b.offset + i] = nb.data[i];
  }
  return ck;
}

}  // namespace flamkit
