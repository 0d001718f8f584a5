// SPDX-License-Identifier: Apache-2.0

#include "flamkit/checks.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "flamkit/batcher.h"
#include "flamkit/encoders.h"
#include "flamkit/inference.h"
#include "flamkit/metrics.h"
#include "flamkit/objectives.h"
#include "flamkit/parallel.h"
#include "flamkit/ringsim.h"
#include "flamkit/rng.h"
#include "flamkit/synth.h"
#include "flamkit/train.h"

namespace flamkit {

nlohmann::json check_to_json(const CheckResult& r) {
  return {{"name", r.name},     {"pass", r.pass},     {"measured", r.measured},
          {"tolerance", r.tolerance}, {"detail", r.detail}, {"seconds", r.seconds}};
}

std::string check_line(const CheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "[%s] %s: measured %.3g, tolerance %.3g, %.1f s", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.measured, r.tolerance, r.seconds);
  std::string line = buf;
  if (!r.detail.empty()) line += " (" + r.detail + ")";
  return line;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr double kGradFloor = 1e-6;

// --- gradient checks --------------------------------------------------------

ModelConfig tiny_config(bool per_text_bias, bool per_text_scale) {
  ModelConfig c;
  c.mel = 6;
  c.clip_context = true;
  c.audio_hidden = 5;
  c.embed_dim = 4;
  c.vocab = 64;
  c.text_hidden = 6;
  c.head_hidden = 3;
  c.per_text_bias = per_text_bias;
  c.per_text_scale = per_text_scale;
  return c;
}

// Moves every trainable block off its initial value so no head sits at the
// flat zero-weight start.
Model random_model(const ModelConfig& c, Rng& rng) {
  Model m(c, rng.next_u64());
  for (const ParamBlock& b : m.params().blocks()) {
    if (b.name.starts_with("audio.norm")) continue;
    for (double& x : m.params().view(b.name)) x += 0.3 * rng.normal();
  }
  return m;
}

const std::vector<std::string> kCaptionPool = {"a low steady tone",       "rapid high ticking clicks",
                                               "soft hum in a room",      "dog barks loudly",
                                               "a quick whistle sweep",   "distant thunder rumble",
                                               "Soft hum in  a room"};

ActivityCurve random_activity(Rng& rng) {
  ActivityCurve c(kLabelFrames, 0);
  const auto on = static_cast<std::size_t>(rng.uniform_int(0, 450));
  const auto len = static_cast<std::size_t>(rng.uniform_int(10, 200));
  for (std::size_t f = on; f < std::min<std::size_t>(on + len, kLabelFrames); ++f) c[f] = 1;
  return c;
}

struct GradInstance {
  SedBatch batch;
  std::vector<Matrix> features;
  std::vector<const Matrix*> ptrs;
};

GradInstance random_instance(Rng& rng, std::size_t mel) {
  GradInstance g;
  const auto B = static_cast<std::size_t>(rng.uniform_int(2, 3));
  for (std::size_t i = 0; i < B; ++i) {
    BatchClip clip;
    clip.record = i;
    const auto E = static_cast<std::size_t>(rng.uniform_int(1, 3));
    std::set<std::string> used;
    for (std::size_t e = 0; e < E; ++e) {
      const std::string& cap =
          kCaptionPool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kCaptionPool.size()) - 1))];
      if (!used.insert(normalize_caption(cap)).second) continue;
      clip.events.push_back({cap, random_activity(rng)});
    }
    clip.global_caption = clip.events.front().caption;
    g.batch.clips.push_back(std::move(clip));
    Matrix f(kModelFrames, mel);
    for (double& v : f.data()) v = rng.normal();
    g.features.push_back(std::move(f));
  }
  for (const auto& f : g.features) g.ptrs.push_back(&f);
  return g;
}

// Independent assembly of the loss values; the analytic side goes through
// compute_step (ring with two devices).
struct Assembled {
  Matrix frames, prompts, audio_global, caption_emb;
  std::vector<double> log_alpha, beta;
  LabelTensor z;
};

Assembled assemble(const Model& m, const GradInstance& g) {
  const std::size_t B = g.batch.clips.size();
  const std::size_t d = m.config().embed_dim;
  const PromptUnion u = union_prompts(g.batch);
  Assembled a;
  a.z = build_label_tensor(g.batch, u, kModelFrames);
  a.frames = Matrix(B * kModelFrames, d);
  a.audio_global = Matrix(B, d);
  a.caption_emb = Matrix(B, d);
  for (std::size_t i = 0; i < B; ++i) {
    const AudioForward fw = m.encode_audio_features(g.features[i]);
    for (std::size_t l = 0; l < kModelFrames; ++l) {
      for (std::size_t x = 0; x < d; ++x) a.frames(i * kModelFrames + l, x) = fw.frames(l, x);
    }
    for (std::size_t x = 0; x < d; ++x) a.audio_global(i, x) = fw.global[x];
    const TextForward t = m.encode_text(g.batch.clips[i].global_caption);
    for (std::size_t x = 0; x < d; ++x) a.caption_emb(i, x) = t.embedding[x];
  }
  a.prompts = Matrix(u.prompts.size(), d);
  for (std::size_t k = 0; k < u.prompts.size(); ++k) {
    const TextForward t = m.encode_text(u.prompts[k]);
    for (std::size_t x = 0; x < d; ++x) a.prompts(k, x) = t.embedding[x];
    a.log_alpha.push_back(t.log_alpha);
    a.beta.push_back(t.beta);
  }
  return a;
}

enum class LossKind { kClip, kSed, kPrior };

double model_loss(const Model& m, const GradInstance& g, LossKind kind, const std::vector<double>* frozen_beta) {
  const Assembled a = assemble(m, g);
  switch (kind) {
    case LossKind::kClip:
      return clip_loss(a.audio_global, a.caption_emb, m.clip_log_scale()).loss;
    case LossKind::kSed:
      return sed_loss(a.frames, a.prompts, a.log_alpha, frozen_beta ? *frozen_beta : a.beta, a.z).loss;
    case LossKind::kPrior:
      return prior_loss(a.beta, zbar(a.z), a.z.prompt_valid).loss;
  }
  return 0.0;
}

struct GradTally {
  double worst = 0.0;
  std::string worst_where;
  std::size_t comparisons = 0;
  std::size_t nonzero_leaks = 0;  // analytic gradient where the design forbids one

  void add(double err, const std::string& where) {
    ++comparisons;
    if (err > worst || std::isnan(err)) {
      worst = std::isnan(err) ? INFINITY : err;
      worst_where = where;
    }
  }
};

std::string group_of(const std::string& block) { return block.substr(0, block.find('.')); }

// Compares one model-level loss over every group; coordinates in `fd_groups`
// are differentiated numerically, all others must carry an exactly zero
// analytic gradient.
void compare_model_loss(Model& m, const GradInstance& g, LossKind kind, const std::set<std::string>& fd_groups,
                        bool freeze_beta, double perturbation, const std::string& tag, GradTally& tally) {
  RunConfig rc;
  rc.devices = 2;
  rc.weights = {kind == LossKind::kClip ? 1.0 : 0.0, kind == LossKind::kSed ? 1.0 : 0.0,
                kind == LossKind::kPrior ? 1.0 : 0.0};
  std::vector<double> analytic = compute_step(m, g.batch, g.ptrs, rc).grad;
  for (double& v : analytic) v *= 1.0 + perturbation;

  std::vector<double> frozen;
  if (freeze_beta) frozen = assemble(m, g).beta;
  std::vector<double>& theta = m.params().values();
  const ScalarFn f = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), theta.begin());
    return model_loss(m, g, kind, freeze_beta ? &frozen : nullptr);
  };
  const std::vector<double> base = theta;

  for (const ParamBlock& b : m.params().blocks()) {
    const std::string group = group_of(b.name);
    const bool numeric = fd_groups.contains(group) && !b.name.starts_with("audio.norm");
    if (!numeric) {
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (analytic[b.offset + i] != 0.0) ++tally.nonzero_leaks;
      }
      continue;
    }
    std::vector<std::size_t> coords(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) coords[i] = b.offset + i;
    const std::vector<double> fd = finite_diff_grad_at(f, base, coords);
    std::copy(base.begin(), base.end(), theta.begin());
    const std::span<const double> an(analytic.data() + b.offset, b.size());
    tally.add(max_relative_error(an, fd, kGradFloor), tag + ":" + b.name);
  }
  std::copy(base.begin(), base.end(), theta.begin());
}

Matrix random_unit_rows(Rng& rng, std::size_t rows, std::size_t d) {
  Matrix m(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    const auto u = l2_normalize(v);
    std::copy(u.begin(), u.end(), m.row(r).begin());
  }
  return m;
}

// Loss-level check: the packed input vector is split into named groups.
void compare_packed(const ScalarFn& f, const std::vector<double>& x, std::vector<double> analytic,
                    const std::vector<std::pair<std::string, std::size_t>>& groups, double perturbation,
                    const std::string& tag, GradTally& tally) {
  for (double& v : analytic) v *= 1.0 + perturbation;
  const std::vector<double> fd = finite_diff_grad(f, x);
  std::size_t off = 0;
  for (const auto& [name, n] : groups) {
    tally.add(max_relative_error(std::span<const double>(analytic.data() + off, n),
                                 std::span<const double>(fd.data() + off, n), kGradFloor),
              tag + ":" + name);
    off += n;
  }
}

void append(std::vector<double>& out, const Matrix& m) { out.insert(out.end(), m.data().begin(), m.data().end()); }

Matrix unpack(std::span<const double> x, std::size_t& off, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(off), x.begin() + static_cast<std::ptrdiff_t>(off + rows * cols),
            m.data().begin());
  off += rows * cols;
  return m;
}

void clip_loss_level(Rng& rng, double perturbation, GradTally& tally) {
  const std::size_t B = 4, d = 5;
  const Matrix a = random_unit_rows(rng, B, d), t = random_unit_rows(rng, B, d);
  std::vector<double> x;
  append(x, a);
  append(x, t);
  x.push_back(rng.uniform(0.0, 2.5));
  const ScalarFn f = [&](std::span<const double> v) {
    std::size_t off = 0;
    const Matrix A = unpack(v, off, B, d), T = unpack(v, off, B, d);
    return clip_loss(A, T, v[off]).loss;
  };
  const ClipLossResult r = clip_loss(a, t, x.back());
  std::vector<double> g;
  append(g, r.d_audio);
  append(g, r.d_text);
  g.push_back(r.d_log_scale);
  compare_packed(f, x, g, {{"audio", B * d}, {"text", B * d}, {"log_scale", 1}}, perturbation, "clip_loss", tally);
}

void siglip_loss_level(Rng& rng, double perturbation, GradTally& tally) {
  const std::size_t B = 4, d = 5;
  const Matrix a = random_unit_rows(rng, B, d), t = random_unit_rows(rng, B, d);
  std::vector<double> x;
  append(x, a);
  append(x, t);
  x.push_back(rng.uniform(0.0, 2.5));
  x.push_back(rng.uniform(-5.0, 0.0));
  const ScalarFn f = [&](std::span<const double> v) {
    std::size_t off = 0;
    const Matrix A = unpack(v, off, B, d), T = unpack(v, off, B, d);
    return siglip_loss(A, T, v[off], v[off + 1]).loss;
  };
  const SiglipLossResult r = siglip_loss(a, t, x[2 * B * d], x[2 * B * d + 1]);
  std::vector<double> g;
  append(g, r.d_audio);
  append(g, r.d_text);
  g.push_back(r.d_log_scale);
  g.push_back(r.d_bias);
  compare_packed(f, x, g, {{"audio", B * d}, {"text", B * d}, {"log_scale", 1}, {"bias", 1}}, perturbation,
                 "siglip_loss", tally);
}

LabelTensor random_labels(Rng& rng, std::size_t B, std::size_t K, std::size_t L, double p_listed) {
  LabelTensor z = make_label_tensor(B, K, L);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!rng.bernoulli(p_listed)) continue;
      z.present[i * K + k] = 1;
      for (std::size_t l = 0; l < L; ++l) z.at(i, k, l) = rng.bernoulli(0.4) ? 1 : -1;
    }
  }
  return z;
}

void sed_loss_level(Rng& rng, double perturbation, GradTally& tally) {
  const std::size_t B = 2, L = 3, K = 3, d = 4;
  const Matrix fr = random_unit_rows(rng, B * L, d), pr = random_unit_rows(rng, K, d);
  LabelTensor z = random_labels(rng, B, K, L, 0.6);
  if (rng.bernoulli(0.5)) z.prompt_valid[K - 1] = 0;
  std::vector<double> x;
  append(x, fr);
  append(x, pr);
  for (std::size_t k = 0; k < K; ++k) x.push_back(rng.uniform(0.5, 3.0));
  for (std::size_t k = 0; k < K; ++k) x.push_back(rng.uniform(-6.0, 1.0));
  const std::size_t la = B * L * d + K * d;
  const ScalarFn f = [&](std::span<const double> v) {
    std::size_t off = 0;
    const Matrix F = unpack(v, off, B * L, d), P = unpack(v, off, K, d);
    return sed_loss(F, P, v.subspan(la, K), v.subspan(la + K, K), z).loss;
  };
  const SedLossResult r = sed_loss(fr, pr, std::span<const double>(x).subspan(la, K),
                                   std::span<const double>(x).subspan(la + K, K), z);
  std::vector<double> g;
  append(g, r.grads.d_frames);
  append(g, r.grads.d_prompts);
  g.insert(g.end(), r.grads.d_log_alpha.begin(), r.grads.d_log_alpha.end());
  g.insert(g.end(), r.grads.d_beta.begin(), r.grads.d_beta.end());
  compare_packed(f, x, g, {{"frames", B * L * d}, {"prompts", K * d}, {"log_alpha", K}, {"beta", K}}, perturbation,
                 "sed_loss", tally);
}

void prior_loss_level(Rng& rng, double perturbation, GradTally& tally) {
  const std::size_t K = 5;
  std::vector<double> beta(K), zb(K);
  std::vector<std::uint8_t> valid(K, 1);
  for (std::size_t k = 0; k < K; ++k) {
    beta[k] = rng.uniform(-9.0, 2.0);
    zb[k] = rng.uniform(0.0, 1.0);
  }
  valid[static_cast<std::size_t>(rng.uniform_int(0, K - 1))] = 0;
  const ScalarFn f = [&](std::span<const double> v) { return prior_loss(v, zb, valid).loss; };
  compare_packed(f, beta, prior_loss(beta, zb, valid).d_beta, {{"beta", K}}, perturbation, "prior_loss", tally);
}

}  // namespace

CheckResult check_gradients(const CheckOptions& opts, std::size_t instances) {
  const auto t0 = Clock::now();
  GradTally tally;
  const double p = opts.gradient_perturbation;
  const std::set<std::string> all_groups(kParamGroups.begin(), kParamGroups.end());
  for (std::size_t t = 0; t < instances; ++t) {
    // CLIP: loss level and through both encoders.
    {
      Rng rng(opts.seed, streams::kTest, 100 + t);
      clip_loss_level(rng, p, tally);
      Model m = random_model(tiny_config(true, true), rng);
      const GradInstance g = random_instance(rng, m.config().mel);
      compare_model_loss(m, g, LossKind::kClip, all_groups, false, p, "clip", tally);
    }
    // SigLIP: its inputs are the whole parameter set.
    {
      Rng rng(opts.seed, streams::kTest, 200 + t);
      siglip_loss_level(rng, p, tally);
    }
    // Frame loss: per-text heads with beta held fixed (stop-gradient), then
    // the scalar ablations where the shared bias learns from this loss.
    {
      Rng rng(opts.seed, streams::kTest, 300 + t);
      sed_loss_level(rng, p, tally);
      const bool ablate = t % 2 == 1;
      Model m = random_model(tiny_config(!ablate, !ablate), rng);
      const GradInstance g = random_instance(rng, m.config().mel);
      compare_model_loss(m, g, LossKind::kSed, all_groups, !ablate, p, ablate ? "sed_scalar" : "sed", tally);
    }
    // Prior: only the bias head learns from it.
    {
      Rng rng(opts.seed, streams::kTest, 400 + t);
      prior_loss_level(rng, p, tally);
      Model m = random_model(tiny_config(true, true), rng);
      const GradInstance g = random_instance(rng, m.config().mel);
      compare_model_loss(m, g, LossKind::kPrior, {"bias_head"}, false, p, "prior", tally);
    }
  }
  CheckResult r;
  r.name = "gradients";
  r.measured = tally.worst;
  r.tolerance = 1e-4;
  r.pass = tally.worst <= r.tolerance && tally.nonzero_leaks == 0;
  std::ostringstream d;
  d << tally.comparisons << " group comparisons over " << instances << " instances per loss; worst at "
    << tally.worst_where << "; stop-gradient leaks " << tally.nonzero_leaks;
  r.detail = d.str();
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_ring_equivalence(const CheckOptions& opts, std::size_t batches) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t bitwise_failures = 0, coverage_failures = 0, schedule_failures = 0, runs = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };
  for (std::size_t N : {1u, 2u, 4u, 8u}) {
    const RingSchedule schedule = make_ring_schedule(N);
    if (!is_latin_square(schedule) || schedule.hops != N - 1) ++schedule_failures;
    for (std::size_t t = 0; t < batches; ++t) {
      Rng rng(opts.seed, streams::kTest, 1000 * N + t);
      const auto B = static_cast<std::size_t>(rng.uniform_int(std::max<std::int64_t>(1, N - 1), 12));
      const std::size_t L = 8, d = 6;
      // Each clip lists up to five prompts, reusing earlier ones or adding
      // new ones, so every prompt of the union is listed by some clip.
      std::vector<std::vector<std::size_t>> lists(B);
      std::size_t pool = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(i == 0 ? 1 : 0, 5));
        for (std::size_t k = 0; k < n; ++k) {
          const bool reuse = pool > 0 && rng.bernoulli(0.5);
          const std::size_t p =
              reuse ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool) - 1)) : pool++;
          if (std::find(lists[i].begin(), lists[i].end(), p) == lists[i].end()) lists[i].push_back(p);
        }
      }
      LabelTensor z = make_label_tensor(B, pool, L);
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t kk : lists[i]) {
          z.present[i * pool + kk] = 1;
          for (std::size_t l = 0; l < L; ++l) z.at(i, kk, l) = rng.bernoulli(0.4) ? 1 : -1;
        }
      }
      if (B > 1 && rng.bernoulli(0.3)) z.clip_valid[static_cast<std::size_t>(rng.uniform_int(0, B - 1))] = 0;
      const Matrix frames = random_unit_rows(rng, B * L, d), prompts = random_unit_rows(rng, pool, d);
      std::vector<double> la(pool), be(pool);
      for (auto& v : la) v = rng.uniform(0.5, 3.0);
      for (auto& v : be) v = rng.uniform(-9.0, -1.0);

      const SedLossResult mono = sed_loss(frames, prompts, la, be, z);
      ShardedBatch sharded = shard_batch(frames, prompts, la, be, z, N);
      const RingResult ring = ring_sed_loss(sharded, schedule, {t % 2 == 1});
      ++runs;
      double err = rel(ring.loss, mono.loss);
      err = std::max(err, max_relative_error(ring.d_frames.data(), mono.grads.d_frames.data(), 1e-300));
      err = std::max(err, max_relative_error(ring.d_prompts.data(), mono.grads.d_prompts.data(), 1e-300));
      err = std::max(err, max_relative_error(ring.d_log_alpha, mono.grads.d_log_alpha, 1e-300));
      err = std::max(err, max_relative_error(ring.d_beta, mono.grads.d_beta, 1e-300));
      if (ring.count != mono.count) err = INFINITY;
      worst = std::max(worst, err);
      if (N == 1) {
        const bool same = ring.loss == mono.loss && ring.d_frames.data() == mono.grads.d_frames.data() &&
                          ring.d_prompts.data() == mono.grads.d_prompts.data() &&
                          ring.d_log_alpha == mono.grads.d_log_alpha && ring.d_beta == mono.grads.d_beta;
        if (!same) ++bitwise_failures;
      }
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < pool; ++k) {
          if (ring.coverage[i * pool + k] != (z.valid(i, k) ? 1u : 0u)) ++coverage_failures;
        }
      }
    }
  }
  CheckResult r;
  r.name = "ring_equivalence";
  r.measured = worst;
  r.tolerance = 1e-6;
  r.pass = worst <= r.tolerance && bitwise_failures == 0 && coverage_failures == 0 && schedule_failures == 0;
  std::ostringstream d;
  d << runs << " batches over N in {1,2,4,8}; N=1 bitwise mismatches " << bitwise_failures
    << "; pairs not scored exactly once " << coverage_failures << "; bad schedules " << schedule_failures;
  r.detail = d.str();
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_tabular_optimum(const CheckOptions& opts, std::size_t worlds) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t unconverged = 0;
  for (std::size_t w = 0; w < worlds; ++w) {
    Rng rng(opts.seed, streams::kTest, 2000 + w);
    const TabularWorld world = make_tabular_world(rng, 8, 3);
    const TabularFit fit = tabular_sed_optimum(world, 200000);
    worst = std::max(worst, fit.max_abs_error);
    if (!fit.converged) ++unconverged;
  }
  CheckResult r;
  r.name = "tabular_optimum";
  r.measured = worst;
  r.tolerance = 1e-2;
  r.pass = worst <= r.tolerance;
  r.detail = std::to_string(worlds) + " worlds of 8 frames x 3 prompts; max |h - h*| per entry; " +
             std::to_string(unconverged) + " stopped at the step budget";
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_prior_calibration(const CheckOptions& opts) {
  const auto t0 = Clock::now();
  const Catalog catalog = default_catalog();
  std::vector<std::string> captions;
  {
    std::set<std::string> seen;
    for (const auto& e : catalog.events) {
      for (const auto& c : e.captions) {
        if (seen.insert(normalize_caption(c)).second) captions.push_back(normalize_caption(c));
      }
    }
  }
  const std::size_t Y = captions.size();

  // Fixed stream: batch s holds each prompt's label mean over 4 clips x 32
  // frames drawn at that prompt's rate.
  constexpr std::size_t kBatches = 32, kFramesPerBatch = 4 * kModelFrames, kSteps = 6000;
  Rng rate_rng(opts.seed, streams::kTest, 3000);
  std::vector<double> rate(Y);
  for (double& p : rate) p = std::exp(rate_rng.uniform(std::log(0.01), std::log(0.5)));
  std::vector<std::vector<double>> stream(kBatches, std::vector<double>(Y));
  std::vector<double> empirical(Y, 0.0);
  for (std::size_t s = 0; s < kBatches; ++s) {
    Rng rng(opts.seed, streams::kTest, 3100 + s);
    for (std::size_t y = 0; y < Y; ++y) {
      std::size_t pos = 0;
      for (std::size_t f = 0; f < kFramesPerBatch; ++f) pos += rng.bernoulli(rate[y]);
      stream[s][y] = static_cast<double>(pos) / kFramesPerBatch;
      empirical[y] += stream[s][y] / kBatches;
    }
  }

  Model model(ModelConfig{}, opts.seed);
  OptState opt;
  const std::vector<double> no_embedding(model.config().embed_dim, 0.0);
  std::vector<TextForward> fw(Y);
  std::vector<double> beta(Y);
  for (std::size_t step = 0; step < kSteps; ++step) {
    opt.hp.lr = step < 2 * kSteps / 3 ? 1e-2 : step < 9 * kSteps / 10 ? 1e-3 : 1e-4;
    for (std::size_t y = 0; y < Y; ++y) {
      fw[y] = model.encode_text(captions[y]);
      beta[y] = fw[y].beta;
    }
    const PriorLossResult pl = prior_loss(beta, stream[step % kBatches]);
    std::vector<double> grad = model.params().zeros();
    for (std::size_t y = 0; y < Y; ++y) model.text_backward(fw[y], no_embedding, 0.0, pl.d_beta[y], grad);
    opt_step(model.params().values(), grad, opt);
  }
  double worst = 0.0;
  std::string where;
  for (std::size_t y = 0; y < Y; ++y) {
    const double err = std::abs(sigmoid(model.encode_text(captions[y]).beta) - empirical[y]);
    if (err > worst) {
      worst = err;
      where = captions[y];
    }
  }
  CheckResult r;
  r.name = "prior_calibration";
  r.measured = worst;
  r.tolerance = 1e-2;
  r.pass = worst <= r.tolerance;
  r.detail = std::to_string(Y) + " catalog prompts, rates 0.01-0.5, " + std::to_string(kSteps) +
             " steps; worst: " + where;
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_classifier_identity() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0;
  for (int i = 1; i <= 99; ++i) {
    for (int j = 1; j <= 99; ++j) {
      const double post = i / 100.0, prior = j / 100.0;
      const double s = exact_classifier(post, prior);
      const int lhs = (s > 0.5) - (s < 0.5);
      const int rhs = (post > prior) - (post < prior);
      if (lhs != rhs) ++mismatches;
    }
  }
  CheckResult r;
  r.name = "classifier_identity";
  r.measured = static_cast<double>(mismatches);
  r.tolerance = 0.0;
  r.pass = mismatches == 0;
  r.detail = "sign(s - 0.5) vs sign(p_post - p_prior) on 9801 grid points";
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_classifier_approximation() {
  const auto t0 = Clock::now();
  double worst = 0.0, at = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    const double rr = -10.0 + 0.01 * i;
    const double e = approx_classifier_error(-8.0, rr);
    if (e > worst) {
      worst = e;
      at = rr;
    }
  }
  CheckResult r;
  r.name = "classifier_approximation";
  r.measured = worst;
  r.tolerance = 1e-3;
  r.pass = worst <= r.tolerance;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "beta* = -8, r in [-10, 10] step 0.01; worst at r = %.2f", at);
  r.detail = buf;
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_siglip_bias(const CheckOptions& opts) {
  const auto t0 = Clock::now();
  const SiglipBiasFit fit = fit_siglip_bias(64, 16, 256, opts.seed);
  CheckResult r;
  r.name = "siglip_bias";
  r.measured = std::abs(fit.beta - fit.target);
  r.tolerance = 0.1;
  r.pass = r.measured <= r.tolerance;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "B = 64: fitted %.4f vs -log 63 = %.4f", fit.beta, fit.target);
  r.detail = buf;
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_relabel_vectors() {
  const auto t0 = Clock::now();
  auto curve = [](const std::string& pattern) {
    ActivityCurve c;
    for (char ch : pattern) c.push_back(ch == '+' ? 1 : 0);
    return c;
  };
  struct Case {
    std::string name;
    ActivityCurve got, want;
  };
  std::vector<Case> cases;
  cases.push_back({"gap of 3 filled", smooth_labels(curve("++---++")), curve("+++++++")});
  {
    const std::string in = std::string(15, '+') + std::string(20, '-') + "+" + std::string(20, '-');
    cases.push_back({"isolated positive removed", smooth_labels(curve(in)),
                     curve(std::string(15, '+') + std::string(41, '-'))});
  }
  cases.push_back({"all negative unchanged", smooth_labels(ActivityCurve(kLabelFrames, 0)),
                   ActivityCurve(kLabelFrames, 0)});

  const std::vector<Segment> span{{2.0, 4.0}};
  const ActivityCurve raw = curve_from_segments(span);
  auto tone = [](std::size_t gap_start, std::size_t gap_len) {
    Waveform x(kClipSamples, 0.0);
    for (std::size_t i = 96000; i < 192000; ++i) {
      x[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / kSampleRate);
    }
    for (std::size_t i = gap_start; i < gap_start + gap_len; ++i) x[i] = 0.0;
    return x;
  };
  cases.push_back({"silent event inactive", rms_relabel(Waveform(kClipSamples, 0.0), raw),
                   ActivityCurve(kLabelFrames, 0)});
  cases.push_back({"full-scale tone keeps raw", rms_relabel(tone(0, 0), raw), raw});
  cases.push_back({"60 ms gap active", rms_relabel(tone(144000, 2880), raw), raw});

  std::size_t failures = 0;
  std::string failed;
  for (const auto& c : cases) {
    if (c.got != c.want) {
      ++failures;
      failed += (failed.empty() ? "" : ", ") + c.name;
    }
  }
  CheckResult r;
  r.name = "relabel_vectors";
  r.measured = static_cast<double>(failures);
  r.tolerance = 0.0;
  r.pass = failures == 0;
  r.detail = std::to_string(cases.size()) + " vectors" + (failed.empty() ? "" : "; failed: " + failed);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_metric_oracles(const CheckOptions& opts, std::size_t instances) {
  const auto t0 = Clock::now();
  std::size_t exact_failures = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    Rng rng(opts.seed, streams::kTest, 4000 + t);
    const bool ties = t % 2 == 1;
    const std::size_t n = 50;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? std::floor(rng.uniform(0.0, 8.0)) / 8.0 : rng.uniform(0.0, 1.0);
      y[i] = rng.bernoulli(0.3);
    }
    y[0] = 1;
    y[1] = 0;
    if (frame_auroc(s, y) != oracle::auroc_pairwise(s, y)) ++exact_failures;
    worst = std::max(worst, std::abs(mpauc(s, y) - oracle::mpauc_threshold_sweep(s, y)));
    worst = std::max(worst, std::abs(spearman_rho(s, y) - oracle::spearman_direct(s, y)));

    const std::size_t m = 20;
    Matrix sim(m, m);
    for (double& v : sim.data()) v = ties ? std::floor(rng.uniform(0.0, 4.0)) : rng.normal();
    for (std::size_t k : {1u, 5u, 20u}) {
      const Recall a = recall_at_k(sim, k), b = oracle::recall_exhaustive(sim, k);
      if (a.text_to_audio != b.text_to_audio || a.audio_to_text != b.audio_to_text) ++exact_failures;
    }
  }
  CheckResult r;
  r.name = "metric_oracles";
  r.measured = worst;
  r.tolerance = 1e-9;
  r.pass = worst <= r.tolerance && exact_failures == 0;
  r.detail = std::to_string(instances) + " instances (half with ties); AUROC/recall exact mismatches " +
             std::to_string(exact_failures) + "; measured is the worst MPAUC/Spearman deviation";
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_synthesis_invariants(std::size_t count, std::uint64_t seed, unsigned threads) {
  const auto t0 = Clock::now();
  const Catalog catalog = default_catalog();
  struct Stats {
    int placed_concurrency = 0;
    int label_concurrency = 0;
    double min_gain = INFINITY, max_gain = -INFINITY;
    std::size_t events = 0, split = 0, repeat = 0;
  };
  std::vector<Stats> stats(count);
  parallel_for(count, threads, [&](std::size_t i) {
    const SynthesizedMixture m = synthesize_mixture(catalog, Partition::kTrain, seed, i);
    Stats& s = stats[i];
    s.placed_concurrency = max_concurrency(m.placed);
    std::vector<int> active(kLabelFrames, 0);
    for (const auto& ev : m.record.events) {
      for (std::size_t f = 0; f < kLabelFrames; ++f) active[f] += ev.activity[f];
    }
    s.label_concurrency = *std::max_element(active.begin(), active.end());
    for (const auto& pe : m.placed) {
      ++s.events;
      s.split += pe.mode == PlacementMode::kSplit;
      s.repeat += pe.mode == PlacementMode::kRepeat;
      s.min_gain = std::min(s.min_gain, pe.gain_db);
      s.max_gain = std::max(s.max_gain, pe.gain_db);
    }
  });
  Stats total;
  for (const Stats& s : stats) {
    total.placed_concurrency = std::max(total.placed_concurrency, s.placed_concurrency);
    total.label_concurrency = std::max(total.label_concurrency, s.label_concurrency);
    total.min_gain = std::min(total.min_gain, s.min_gain);
    total.max_gain = std::max(total.max_gain, s.max_gain);
    total.events += s.events;
    total.split += s.split;
    total.repeat += s.repeat;
  }
  const double n = static_cast<double>(std::max<std::size_t>(total.events, 1));
  const double split_rate = total.split / n, repeat_rate = total.repeat / n;
  CheckResult r;
  r.name = "synthesis_invariants";
  r.measured = std::max(std::abs(split_rate - 0.1), std::abs(repeat_rate - 0.1));
  r.tolerance = 0.02;
  r.pass = r.measured <= r.tolerance && total.placed_concurrency <= 3 && total.label_concurrency <= 3 &&
           total.min_gain >= 6.0 && total.max_gain <= 30.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%zu mixtures, %zu events; max concurrency placed %d / labels %d; gains [%.2f, %.2f] dB; "
                "split %.4f, repeat %.4f",
                count, total.events, total.placed_concurrency, total.label_concurrency, total.min_gain,
                total.max_gain, split_rate, repeat_rate);
  r.detail = buf;
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<CheckResult> run_verify_suite(const CheckOptions& opts) {
  return {check_gradients(opts),
          check_ring_equivalence(opts),
          check_tabular_optimum(opts),
          check_classifier_identity(),
          check_classifier_approximation(),
          check_relabel_vectors(),
          check_metric_oracles(opts),
          check_siglip_bias(opts),
          check_prior_calibration(opts)};
}

}  // namespace flamkit
