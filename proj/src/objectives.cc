// SPDX-License-Identifier: Apache-2.0

#include "flamkit/objectives.h"

#include <cmath>
#include <limits>

namespace flamkit {

namespace {

void check_unit_rows(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = norm2(m.row(r));
    if (std::abs(n - 1.0) > 1e-4) {
      throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) + " is not unit-norm (" +
                            std::to_string(n) + ")");
    }
  }
}

void check_pair_shapes(const Matrix& a, const Matrix& t) {
  if (a.rows() == 0 || !a.same_shape(t)) throw InvalidArgument("audio and text batches must be non-empty and equal-shaped");
  check_unit_rows(a, "audio embeddings");
  check_unit_rows(t, "text embeddings");
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// -log softmax(v)_i. Relative to the diagonal so a near-zero loss keeps its
// digits instead of cancelling against a large log-sum-exp.
double neg_log_softmax_at(std::span<const double> v, std::size_t i) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x - v[i]);
  double s = 0.0;
  if (m == 0.0) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j != i) s += std::exp(v[j] - v[i]);
    }
    return std::log1p(s);
  }
  for (double x : v) s += std::exp(x - v[i] - m);
  return m + std::log(s);
}

}  // namespace

ClipLossResult clip_loss(const Matrix& audio, const Matrix& text, double log_scale) {
  check_pair_shapes(audio, text);
  const std::size_t B = audio.rows();
  const double alpha = std::exp(log_scale);
  Matrix s(B, B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) s(i, j) = alpha * dot(audio.row(i), text.row(j));
  }
  std::vector<double> row_lse(B), col_lse(B), col(B);
  for (std::size_t i = 0; i < B; ++i) row_lse[i] = log_sum_exp(s.row(i));
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t i = 0; i < B; ++i) col[i] = s(i, j);
    col_lse[j] = log_sum_exp(col);
  }
  std::vector<double> terms(2 * B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < B; ++k) col[k] = s(k, i);
    terms[i] = neg_log_softmax_at(s.row(i), i);
    terms[B + i] = neg_log_softmax_at(col, i);
  }
  ClipLossResult r;
  r.loss = pairwise_sum(terms) / (2.0 * static_cast<double>(B));

  // dL/dS_ij = (P_ij + Q_ij - 2 delta_ij) / 2B with P row-, Q column-softmax.
  const double inv = 1.0 / (2.0 * static_cast<double>(B));
  Matrix g(B, B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      // On the diagonal P_ii - 1 = expm1(-term_i), which stays accurate near 1.
      g(i, j) = i == j ? inv * (std::expm1(-terms[i]) + std::expm1(-terms[B + i]))
                       : inv * (std::exp(s(i, j) - row_lse[i]) + std::exp(s(i, j) - col_lse[j]));
    }
  }
  r.d_audio = Matrix(B, audio.cols());
  r.d_text = Matrix(B, text.cols());
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      axpy(alpha * g(i, j), text.row(j), r.d_audio.row(i));
      axpy(alpha * g(i, j), audio.row(i), r.d_text.row(j));
      r.d_log_scale += g(i, j) * s(i, j);
    }
  }
  return r;
}

SiglipLossResult siglip_loss(const Matrix& audio, const Matrix& text, double log_scale, double bias) {
  check_pair_shapes(audio, text);
  const std::size_t B = audio.rows();
  const double alpha = std::exp(log_scale);
  const double inv = 1.0 / static_cast<double>(B);
  SiglipLossResult r;
  r.d_audio = Matrix(B, audio.cols());
  r.d_text = Matrix(B, text.cols());
  std::vector<double> terms;
  terms.reserve(B * B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double z = i == j ? 1.0 : -1.0;
      const double d = dot(audio.row(i), text.row(j));
      const double h = alpha * d + bias;
      terms.push_back(-log_sigmoid(z * h));
      const double g = -z * sigmoid(-z * h) * inv;
      axpy(g * alpha, text.row(j), r.d_audio.row(i));
      axpy(g * alpha, audio.row(i), r.d_text.row(j));
      r.d_log_scale += g * alpha * d;
      r.d_bias += g;
    }
  }
  r.loss = pairwise_sum(terms) * inv;
  return r;
}

void sed_kernel(const ClipRange& clips, const PromptBlock& block, const LabelTensor& z, std::vector<double>& terms,
                const std::function<void(std::size_t, std::size_t)>& visit) {
  const std::size_t L = z.L;
  const Matrix& frames = *clips.frames;
  const Matrix& emb = *block.embeddings;
  const std::size_t slots = block.prompt_index.size();
  for (std::size_t c = 0; c < clips.clips; ++c) {
    const std::size_t i = clips.first_clip + c;
    if (!z.clip_valid[i]) continue;
    for (std::size_t s = 0; s < slots; ++s) {
      const std::int64_t k = block.prompt_index[s];
      if (k < 0 || !z.prompt_valid[static_cast<std::size_t>(k)]) continue;
      const auto ku = static_cast<std::size_t>(k);
      if (visit) visit(i, ku);
      const double alpha = scale_from_log(block.log_alpha[s]);
      const double beta = block.beta[s];
      for (std::size_t l = 0; l < L; ++l) {
        const int zv = z.at(i, ku, l);
        if (zv != 1 && zv != -1) throw InvalidArgument("label tensor entries must be -1 or +1");
        const std::size_t row = c * L + l;
        const double d = dot(frames.row(row), emb.row(s));
        const double h = alpha * d + beta;
        terms.push_back(-log_sigmoid(zv * h));
        const double g = -zv * sigmoid(-zv * h);
        if (clips.d_frames) axpy(g * alpha, emb.row(s), clips.d_frames->row(row));
        if (block.d_embeddings) axpy(g * alpha, frames.row(row), block.d_embeddings->row(s));
        if (!block.d_log_alpha.empty()) block.d_log_alpha[s] += g * alpha * d;
        if (!block.d_beta.empty()) block.d_beta[s] += g;
      }
    }
  }
}

SedLossResult sed_loss(const Matrix& frames, const Matrix& prompts, std::span<const double> log_alpha,
                       std::span<const double> beta, const LabelTensor& z) {
  if (frames.rows() != z.B * z.L || prompts.rows() != z.K || log_alpha.size() != z.K || beta.size() != z.K ||
      (z.K > 0 && frames.cols() != prompts.cols())) {
    throw InvalidArgument("sed_loss: inconsistent shapes");
  }
  SedLossResult r;
  r.grads.d_frames = Matrix(frames.rows(), frames.cols());
  r.grads.d_prompts = Matrix(prompts.rows(), prompts.cols());
  r.grads.d_log_alpha.assign(z.K, 0.0);
  r.grads.d_beta.assign(z.K, 0.0);
  std::vector<std::int64_t> index(z.K);
  for (std::size_t k = 0; k < z.K; ++k) index[k] = static_cast<std::int64_t>(k);

  ClipRange cr{&frames, 0, z.B, &r.grads.d_frames};
  PromptBlock pb{&prompts, log_alpha, beta, index, &r.grads.d_prompts, r.grads.d_log_alpha, r.grads.d_beta};
  std::vector<double> terms;
  sed_kernel(cr, pb, z, terms);
  r.count = terms.size();
  if (r.count == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.count);
  r.loss = pairwise_sum(terms) * inv;
  for (double& v : r.grads.d_frames.data()) v *= inv;
  for (double& v : r.grads.d_prompts.data()) v *= inv;
  for (double& v : r.grads.d_log_alpha) v *= inv;
  for (double& v : r.grads.d_beta) v *= inv;
  return r;
}

std::vector<double> zbar(const LabelTensor& z) {
  std::vector<double> out(z.K, 0.0);
  for (std::size_t k = 0; k < z.K; ++k) {
    if (!z.prompt_valid[k]) continue;
    double pos = 0.0, n = 0.0;
    for (std::size_t i = 0; i < z.B; ++i) {
      if (!z.clip_valid[i]) continue;
      for (std::size_t l = 0; l < z.L; ++l) {
        pos += 0.5 * (z.at(i, k, l) + 1);
        n += 1.0;
      }
    }
    out[k] = n > 0.0 ? pos / n : 0.0;
  }
  return out;
}

PriorLossResult prior_loss(std::span<const double> beta, std::span<const double> zb,
                           std::span<const std::uint8_t> valid) {
  if (beta.size() != zb.size() || (!valid.empty() && valid.size() != beta.size())) {
    throw InvalidArgument("prior_loss: inconsistent shapes");
  }
  PriorLossResult r;
  r.d_beta.assign(beta.size(), 0.0);
  std::vector<double> terms;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    if (!valid.empty() && !valid[k]) continue;
    if (!(zb[k] >= 0.0 && zb[k] <= 1.0)) throw InvalidArgument("prior_loss: zbar outside [0,1]");
    terms.push_back(-(zb[k] * log_sigmoid(beta[k]) + (1.0 - zb[k]) * log_sigmoid(-beta[k])));
    r.d_beta[k] = sigmoid(beta[k]) - zb[k];
  }
  if (terms.empty()) return r;
  const double inv = 1.0 / static_cast<double>(terms.size());
  r.loss = pairwise_sum(terms) * inv;
  for (double& v : r.d_beta) v *= inv;
  return r;
}

void validate_weights(const LossWeights& w) {
  if (!(w.clip >= 0.0) || !(w.sed >= 0.0) || !(w.prior >= 0.0)) {
    throw InvalidArgument("loss weights must be non-negative");
  }
}

LossReport combine_losses(const LossWeights& w, double clip, double sed, double prior) {
  validate_weights(w);
  LossReport r;
  r.clip = clip;
  r.sed = sed;
  r.prior = prior;
  r.total = w.clip * clip + w.sed * sed + w.prior * prior;
  return r;
}

nlohmann::json LossReport::to_json() const {
  return {{"clip", clip}, {"sed", sed}, {"prior", prior}, {"total", total}, {"grad_norms", grad_norms}};
}

// ---------------------------------------------------------------------------

namespace {

TabularWorld assemble_world(std::size_t F, std::size_t Y, const std::vector<double>& pair_joint,
                            const std::vector<double>& prompt_mass, const std::vector<double>& pos_rate) {
  TabularWorld w;
  w.frames = F;
  w.prompts = Y;
  w.pair_joint = pair_joint;
  std::vector<double> pf(F, 0.0), py(Y, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t y = 0; y < Y; ++y) {
      pf[f] += pair_joint[f * Y + y];
      py[y] += pair_joint[f * Y + y];
    }
  }
  w.p_pos.resize(F * Y);
  w.p_neg.resize(F * Y);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t y = 0; y < Y; ++y) {
      w.p_pos[f * Y + y] = prompt_mass[y] * pos_rate[y] * pair_joint[f * Y + y] / py[y];
      w.p_neg[f * Y + y] = prompt_mass[y] * (1.0 - pos_rate[y]) * pf[f];
    }
  }
  return w;
}

}  // namespace

TabularWorld make_tabular_world(Rng& rng, std::size_t F, std::size_t Y, bool independent) {
  if (F == 0 || Y == 0) throw InvalidArgument("tabular world needs at least one frame and one prompt");
  std::vector<double> joint(F * Y);
  if (independent) {
    std::vector<double> a(F), b(Y);
    for (double& v : a) v = rng.uniform(0.2, 1.0);
    for (double& v : b) v = rng.uniform(0.2, 1.0);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t y = 0; y < Y; ++y) joint[f * Y + y] = a[f] * b[y];
    }
  } else {
    for (double& v : joint) v = rng.uniform(0.05, 1.0);
  }
  double total = 0.0;
  for (double v : joint) total += v;
  for (double& v : joint) v /= total;
  std::vector<double> mass(Y), rate(Y);
  double mass_total = 0.0;
  for (std::size_t y = 0; y < Y; ++y) {
    mass[y] = rng.uniform(0.5, 1.0);
    mass_total += mass[y];
    rate[y] = rng.uniform(0.05, 0.5);
  }
  for (double& v : mass) v /= mass_total;
  return assemble_world(F, Y, joint, mass, rate);
}

TabularWorld uniform_tabular_world(std::size_t F, std::size_t Y) {
  std::vector<double> joint(F * Y, 1.0 / static_cast<double>(F * Y));
  std::vector<double> mass(Y, 1.0 / static_cast<double>(Y)), rate(Y, 0.5);
  return assemble_world(F, Y, joint, mass, rate);
}

Matrix tabular_closed_form(const TabularWorld& w) {
  const std::size_t F = w.frames, Y = w.prompts;
  std::vector<double> pf(F, 0.0), py(Y, 0.0), pos_y(Y, 0.0), neg_y(Y, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t y = 0; y < Y; ++y) {
      pf[f] += w.pair_joint[f * Y + y];
      py[y] += w.pair_joint[f * Y + y];
      pos_y[y] += w.pos(f, y);
      neg_y[y] += w.neg(f, y);
    }
  }
  Matrix h(F, Y);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t y = 0; y < Y; ++y) {
      const double p_y_given_f = w.pair_joint[f * Y + y] / pf[f];
      h(f, y) = std::log(p_y_given_f / py[y]) + std::log(pos_y[y] / neg_y[y]);
    }
  }
  return h;
}

double tabular_expected_loss(const TabularWorld& w, const Matrix& h) {
  double loss = 0.0;
  for (std::size_t f = 0; f < w.frames; ++f) {
    for (std::size_t y = 0; y < w.prompts; ++y) {
      loss -= w.pos(f, y) * log_sigmoid(h(f, y)) + w.neg(f, y) * log_sigmoid(-h(f, y));
    }
  }
  return loss;
}

TabularFit tabular_sed_optimum(const TabularWorld& w, std::size_t steps, double lr, double tol) {
  for (std::size_t i = 0; i < w.p_pos.size(); ++i) {
    if (!(w.p_pos[i] > 0.0) || !(w.p_neg[i] > 0.0)) throw InvalidArgument("tabular world must be strictly positive");
  }
  if (lr <= 0.0) {
    double max_mass = 0.0;
    for (std::size_t i = 0; i < w.p_pos.size(); ++i) max_mass = std::max(max_mass, w.p_pos[i] + w.p_neg[i]);
    // Curvature of each entry is at most mass/4.
    lr = 4.0 / max_mass;
  }
  TabularFit fit;
  fit.h = Matrix(w.frames, w.prompts, 0.0);
  for (fit.steps = 0; fit.steps < steps; ++fit.steps) {
    fit.grad_max = 0.0;
    for (std::size_t f = 0; f < w.frames; ++f) {
      for (std::size_t y = 0; y < w.prompts; ++y) {
        const double g = (w.pos(f, y) + w.neg(f, y)) * sigmoid(fit.h(f, y)) - w.pos(f, y);
        fit.grad_max = std::max(fit.grad_max, std::abs(g));
        fit.h(f, y) -= lr * g;
      }
    }
    if (fit.grad_max < tol) {
      fit.converged = true;
      break;
    }
  }
  fit.closed_form = tabular_closed_form(w);
  for (std::size_t f = 0; f < w.frames; ++f) {
    for (std::size_t y = 0; y < w.prompts; ++y) {
      fit.max_abs_error = std::max(fit.max_abs_error, std::abs(fit.h(f, y) - fit.closed_form(f, y)));
    }
  }
  return fit;
}

SiglipBiasFit fit_siglip_bias(std::size_t B, std::size_t dim, std::size_t batches, std::uint64_t seed,
                              double log_scale) {
  if (B < 2 || dim == 0 || batches == 0) throw InvalidArgument("fit_siglip_bias: need B >= 2, dim > 0, batches > 0");
  const double alpha = std::exp(log_scale);
  std::vector<double> pos, neg;
  const Rng root(seed, streams::kTest);
  auto unit = [&](Rng& rng) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    return l2_normalize(v);
  };
  for (std::size_t b = 0; b < batches; ++b) {
    Rng rng = root.substream(b);
    std::vector<std::vector<double>> a(B), t(B);
    for (auto& v : a) v = unit(rng);
    for (auto& v : t) v = unit(rng);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) (i == j ? pos : neg).push_back(alpha * dot(a[i], t[j]));
    }
  }
  // Newton on the convex pooled loss in beta.
  double beta = 0.0;
  for (int it = 0; it < 100; ++it) {
    double g = 0.0, hess = 0.0;
    for (double s : pos) {
      const double p = sigmoid(s + beta);
      g -= 1.0 - p;
      hess += p * (1.0 - p);
    }
    for (double s : neg) {
      const double p = sigmoid(s + beta);
      g += p;
      hess += p * (1.0 - p);
    }
    const double step = g / hess;
    beta -= step;
    if (std::abs(step) < 1e-13) break;
  }
  return {beta, -std::log(static_cast<double>(B - 1)), batches};
}

}  // namespace flamkit
