// SPDX-License-Identifier: Apache-2.0

#include "flamkit/train.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flamkit/parallel.h"
#include "flamkit/ringsim.h"
#include "flamkit/rng.h"

namespace flamkit {

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  m.per_text_bias = per_text_bias;
  m.per_text_scale = per_text_scale;
  return m;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"train_manifest", c.train_manifest},
          {"eval_manifest", c.eval_manifest},
          {"catalog", c.catalog},
          {"out_dir", c.out_dir},
          {"batch_size", c.batch_size},
          {"devices", c.devices},
          {"weights", {{"clip", c.weights.clip}, {"sed", c.weights.sed}, {"prior", c.weights.prior}}},
          {"lr", c.lr},
          {"steps", c.steps},
          {"log_interval", c.log_interval},
          {"eval_interval", c.eval_interval},
          {"checkpoint_interval", c.checkpoint_interval},
          {"ablation",
           {{"per_text_bias", c.per_text_bias ? "on" : "scalar"},
            {"per_text_scale", c.per_text_scale ? "on" : "scalar"},
            {"global_loss", c.global_loss ? "on" : "off"}}},
          {"tag_prob", c.tag_prob},
          {"resample_augment", c.resample_augment},
          {"ring_threaded", c.ring_threaded},
          {"model", model_config_to_json(c.model)}};
}

namespace {

bool parse_flag(const nlohmann::json& j, const char* key, const char* on, const char* off, bool def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (v.is_boolean()) return v.get<bool>();
  const std::string s = v.get<std::string>();
  if (s == on) return true;
  if (s == off) return false;
  throw InvalidArgument(std::string("ablation.") + key + " must be \"" + on + "\" or \"" + off + "\"");
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.train_manifest = j.value("train_manifest", c.train_manifest);
    c.eval_manifest = j.value("eval_manifest", c.eval_manifest);
    c.catalog = j.value("catalog", c.catalog);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.devices = j.value("devices", c.devices);
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      c.weights.clip = w.value("clip", c.weights.clip);
      c.weights.sed = w.value("sed", c.weights.sed);
      c.weights.prior = w.value("prior", c.weights.prior);
    }
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.log_interval = j.value("log_interval", c.log_interval);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      c.per_text_bias = parse_flag(a, "per_text_bias", "on", "scalar", c.per_text_bias);
      c.per_text_scale = parse_flag(a, "per_text_scale", "on", "scalar", c.per_text_scale);
      c.global_loss = parse_flag(a, "global_loss", "on", "off", c.global_loss);
    }
    c.tag_prob = j.value("tag_prob", c.tag_prob);
    c.resample_augment = j.value("resample_augment", c.resample_augment);
    c.ring_threaded = j.value("ring_threaded", c.ring_threaded);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  validate_run_config(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void validate_run_config(const RunConfig& c) {
  if (c.batch_size == 0) throw InvalidArgument("batch_size must be at least 1");
  if (c.devices == 0) throw InvalidArgument("devices must be at least 1");
  validate_weights(c.weights);
  if (!(c.lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (!(c.tag_prob >= 0.0 && c.tag_prob <= 1.0)) throw InvalidArgument("tag_prob must lie in [0, 1]");
}

std::uint64_t config_hash(const RunConfig& c) {
  // The output location is not part of what a run computes.
  nlohmann::json j = run_config_to_json(c);
  j.erase("out_dir");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

// Band limits standing in for a 16 kHz and a 32 kHz source.
const double kVariantCutoffs[] = {7200.0, 14400.0};

std::vector<Matrix> feature_variants(const Waveform& wave) {
  std::vector<Matrix> out;
  for (double fc : kVariantCutoffs) out.push_back(audio_features(filter(lowpass(kSampleRate, fc), wave)));
  return out;
}

}  // namespace

FeatureSet load_feature_set(const Manifest& manifest, bool with_variants, unsigned threads) {
  FeatureSet fs;
  fs.records = manifest.records;
  const std::size_t n = fs.records.size();
  fs.features.resize(n);
  if (with_variants) fs.variants.resize(n);
  for (const auto& r : fs.records) {
    if (r.sr != kSampleRate) {
      throw InvalidArgument("record " + r.id + " has sample rate " + std::to_string(r.sr) + "; expected " +
                            std::to_string(kSampleRate));
    }
  }
  parallel_for(n, threads, [&](std::size_t i) {
    const Waveform wave = read_wav(manifest.audio_path(i)).samples;
    fs.features[i] = audio_features(wave);
    if (with_variants) fs.variants[i] = feature_variants(wave);
  });
  return fs;
}

FeatureSet synthesize_feature_set(const Catalog& catalog, Partition partition, std::size_t count, std::uint64_t seed,
                                  bool with_variants, unsigned threads) {
  FeatureSet fs;
  fs.records.resize(count);
  fs.features.resize(count);
  if (with_variants) fs.variants.resize(count);
  parallel_for(count, threads, [&](std::size_t i) {
    SynthesizedMixture m = synthesize_mixture(catalog, partition, seed, i);
    fs.features[i] = audio_features(m.audio);
    if (with_variants) fs.variants[i] = feature_variants(m.audio);
    fs.records[i] = std::move(m.record);
  });
  return fs;
}

void feature_statistics(const FeatureSet& data, std::vector<double>& mean, std::vector<double>& stddev) {
  if (data.features.empty()) throw InvalidArgument("feature_statistics: empty feature set");
  const std::size_t F = data.features[0].cols();
  mean.assign(F, 0.0);
  stddev.assign(F, 0.0);
  double n = 0.0;
  for (const Matrix& m : data.features) {
    for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), mean);
    n += static_cast<double>(m.rows());
  }
  for (double& v : mean) v /= n;
  for (const Matrix& m : data.features) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t j = 0; j < F; ++j) stddev[j] += (m(r, j) - mean[j]) * (m(r, j) - mean[j]);
    }
  }
  for (double& v : stddev) v = std::max(std::sqrt(v / n), 1e-6);
}

StepResult compute_step(const Model& model, const SedBatch& batch, const std::vector<const Matrix*>& features,
                        const RunConfig& config) {
  const std::size_t B = batch.clips.size();
  if (features.size() != B) throw InvalidArgument("compute_step: one feature matrix per clip required");
  validate_weights(config.weights);
  const ModelConfig& mc = model.config();
  const std::size_t d = mc.embed_dim;
  const double w_clip = config.global_loss ? config.weights.clip : 0.0;
  const double w_sed = config.weights.sed;
  const double w_prior = mc.per_text_bias ? config.weights.prior : 0.0;

  const PromptUnion prompts = union_prompts(batch);
  const LabelTensor z = build_label_tensor(batch, prompts, kModelFrames);
  const std::size_t K = prompts.prompts.size();
  const std::size_t L = z.L;

  std::vector<AudioForward> audio(B);
  parallel_for(B, 0, [&](std::size_t i) { audio[i] = model.encode_audio_features(*features[i]); });
  for (const auto& a : audio) {
    if (a.frames.rows() != L) throw InvalidArgument("compute_step: features must have one row per model frame");
  }
  std::vector<TextForward> text(K);
  for (std::size_t k = 0; k < K; ++k) text[k] = model.encode_text(prompts.prompts[k]);

  Matrix frames(B * L, d), prompt_emb(K, d);
  std::vector<double> log_alpha(K), beta(K);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t l = 0; l < L; ++l) {
      std::copy(audio[i].frames.row(l).begin(), audio[i].frames.row(l).end(), frames.row(i * L + l).begin());
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    std::copy(text[k].embedding.begin(), text[k].embedding.end(), prompt_emb.row(k).begin());
    log_alpha[k] = text[k].log_alpha;
    beta[k] = text[k].beta;
  }

  StepResult out;
  out.grad = model.params().zeros();

  // Frame loss through the ring.
  ShardedBatch sharded = shard_batch(frames, prompt_emb, log_alpha, beta, z, config.devices);
  const RingSchedule schedule = make_ring_schedule(config.devices);
  const RingResult sed = ring_sed_loss(sharded, schedule, {config.ring_threaded});
  out.sed_count = sed.count;

  // Prior loss on the bias values only.
  PriorLossResult prior;
  if (mc.per_text_bias) prior = prior_loss(beta, zbar(z), z.prompt_valid);

  // Global loss.
  ClipLossResult clip;
  std::vector<TextForward> captions;
  if (w_clip > 0.0) {
    Matrix ea(B, d), et(B, d);
    captions.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
      captions[i] = model.encode_text(batch.clips[i].global_caption);
      std::copy(audio[i].global.begin(), audio[i].global.end(), ea.row(i).begin());
      std::copy(captions[i].embedding.begin(), captions[i].embedding.end(), et.row(i).begin());
    }
    clip = clip_loss(ea, et, model.clip_log_scale());
  }

  // Backward.
  Matrix d_frames(L, d);
  std::vector<double> d_global(d);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto src = sed.d_frames.row(i * L + l);
      for (std::size_t x = 0; x < d; ++x) d_frames(l, x) = w_sed * src[x];
    }
    std::fill(d_global.begin(), d_global.end(), 0.0);
    if (w_clip > 0.0) {
      for (std::size_t x = 0; x < d; ++x) d_global[x] = w_clip * clip.d_audio(i, x);
    }
    model.audio_backward(audio[i], d_frames, d_global, out.grad);
  }
  std::vector<double> d_emb(d);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t x = 0; x < d; ++x) d_emb[x] = w_sed * sed.d_prompts(k, x);
    // Stop-gradient: with a per-text bias head the frame loss never reaches it.
    const double d_beta = mc.per_text_bias ? w_prior * prior.d_beta[k] : w_sed * sed.d_beta[k];
    model.text_backward(text[k], d_emb, w_sed * sed.d_log_alpha[k], d_beta, out.grad);
  }
  if (w_clip > 0.0) {
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t x = 0; x < d; ++x) d_emb[x] = w_clip * clip.d_text(i, x);
      model.text_backward(captions[i], d_emb, 0.0, 0.0, out.grad);
    }
    out.grad[model.clip_scale_block().offset] += w_clip * clip.d_log_scale;
  }

  LossWeights effective{w_clip, w_sed, w_prior};
  out.report = combine_losses(effective, clip.loss, sed.loss, prior.loss);
  for (const std::string& g : kParamGroups) out.report.grad_norms[g] = group_norm(model.params(), out.grad, g);
  return out;
}

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

TrainResult train(const RunConfig& config, const FeatureSet& data, const Catalog* catalog,
                  const TrainOptions& options) {
  validate_run_config(config);
  if (data.records.size() != data.features.size()) throw InvalidArgument("feature set is inconsistent");
  const bool augment = config.resample_augment;
  if (augment && data.variants.size() != data.features.size()) {
    throw InvalidArgument("resample augmentation needs feature variants");
  }

  TrainResult result;
  result.config_hash = config_hash(config);
  result.model = Model(config.effective_model(), config.seed);
  std::vector<double> mean, stddev;
  feature_statistics(data, mean, stddev);
  result.model.set_feature_normalization(mean, stddev);

  SamplerOptions so;
  so.tag_prob = catalog ? config.tag_prob : 0.0;
  if (catalog) so.tags = caption_tag_map(*catalog);
  const BatchSampler sampler(data.records, config.batch_size, config.seed, so);

  std::ofstream log_stream;
  const std::filesystem::path out_dir(config.out_dir);
  if (options.write_artifacts) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + config.out_dir + ": " + ec.message());
    std::ofstream cfg(out_dir / "config.json");
    nlohmann::json snapshot = run_config_to_json(config);
    snapshot["config_hash"] = hash_hex(result.config_hash);
    snapshot["code_version"] = kCodeVersion;
    cfg << snapshot.dump(2) << "\n";
    result.loss_log_path = (out_dir / "loss_log.jsonl").string();
    log_stream.open(result.loss_log_path, std::ios::trunc);
    if (!log_stream) throw IoError("cannot write " + result.loss_log_path);
  }

  auto save = [&](const std::string& name) {
    const std::string path = (out_dir / name).string();
    save_checkpoint(path, result.model, result.config_hash);
    return path;
  };

  OptState opt;
  opt.hp.lr = config.lr;
  const Rng augment_root(config.seed, streams::kAugment);
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    const SedBatch batch = sampler.batch(step);
    std::vector<const Matrix*> feats;
    for (std::size_t b = 0; b < batch.clips.size(); ++b) {
      const std::size_t r = batch.clips[b].record;
      const Matrix* f = &data.features[r];
      if (augment) {
        Rng rng = augment_root.substream(step, b);
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(data.variants[r].size()));
        if (pick > 0) f = &data.variants[r][static_cast<std::size_t>(pick - 1)];
      }
      feats.push_back(f);
    }
    StepResult sr = compute_step(result.model, batch, feats, config);
    if (options.gradient_hook) options.gradient_hook(sr.grad);
    if (!std::isfinite(sr.report.total) || !all_finite(sr.grad)) {
      std::ostringstream msg;
      msg << "non-finite loss or gradient at step " << step << " (clip " << sr.report.clip << ", sed "
          << sr.report.sed << ", prior " << sr.report.prior << "); batch records:";
      for (const auto& c : batch.clips) msg << " " << data.records[c.record].id;
      throw TrainingError(msg.str());
    }
    opt_step(result.model.params().values(), sr.grad, opt);

    const bool last = step + 1 == config.steps;
    if (config.log_interval > 0 && (step % config.log_interval == 0 || last)) {
      StepLog entry{step, batch.epoch, sr.report};
      result.log.push_back(entry);
      if (log_stream.is_open()) {
        nlohmann::json j = sr.report.to_json();
        j["step"] = step;
        j["epoch"] = batch.epoch;
        j["config_hash"] = hash_hex(result.config_hash);
        log_stream << j.dump() << "\n";
      }
      if (options.on_log) options.on_log(entry);
    }
    if (options.write_artifacts && config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 &&
        !last) {
      save("checkpoint_step" + std::to_string(step + 1) + ".flmk");
    }
    if (options.on_eval && config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 && !last) {
      options.on_eval(result.model, step + 1);
    }
  }
  if (options.write_artifacts) result.checkpoint_path = save("checkpoint.flmk");
  if (options.on_eval) options.on_eval(result.model, config.steps);
  return result;
}

}  // namespace flamkit
