// SPDX-License-Identifier: Apache-2.0

#include "flamkit/numcore.h"

#include <algorithm>
#include <cmath>

namespace flamkit {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double log_sigmoid(double x) {
  if (!std::isfinite(x)) throw InvalidArgument("log_sigmoid: non-finite input");
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > 1e-12)) throw DegenerateVector("l2_normalize: near-zero norm");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> y, double norm,
                                          std::span<const double> dy) {
  const double proj = dot(y, dy);
  std::vector<double> dv(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dv[i] = (dy[i] - y[i] * proj) / norm;
  return dv;
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

void opt_step(std::span<double> params, std::span<const double> grads, OptState& state) {
  if (params.size() != grads.size()) throw InvalidArgument("opt_step: shape mismatch");
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidArgument("opt_step: accumulator shape mismatch");
  }
  const AdamConfig& hp = state.hp;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

namespace {

double checked_eval(const ScalarFn& f, std::span<const double> x) {
  const double y = f(x);
  if (!std::isfinite(y)) throw InvalidArgument("finite_diff_grad: non-finite evaluation");
  return y;
}

}  // namespace

std::vector<double> finite_diff_grad_at(const ScalarFn& f, std::span<const double> x,
                                        std::span<const std::size_t> coords, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidArgument("finite_diff_grad: h outside [1e-7, 1e-3]");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad;
  grad.reserve(coords.size());
  for (std::size_t i : coords) {
    if (i >= probe.size()) throw InvalidArgument("finite_diff_grad: coordinate out of range");
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = checked_eval(f, probe);
    probe[i] = orig - h;
    const double down = checked_eval(f, probe);
    probe[i] = orig;
    grad.push_back((up - down) / (2.0 * h));
  }
  return grad;
}

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finite_diff_grad_at(f, x, all, h);
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size()) throw InvalidArgument("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace flamkit
