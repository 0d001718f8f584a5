// SPDX-License-Identifier: Apache-2.0

#include "flamkit/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flamkit {

namespace {

void check_binary(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t& pos,
                  std::size_t& neg) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  pos = neg = 0;
  for (auto l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw UndefinedMetric("metric needs at least one positive and one negative");
}

// 1-based average ranks, ascending.
std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetric("correlation of a constant vector");
  return sab / std::sqrt(saa * sbb);
}

double partial_area(const std::vector<RocPoint>& pts, double max_fpr) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const RocPoint a = pts[i - 1];
    RocPoint b = pts[i];
    if (a.fpr >= max_fpr) break;
    if (b.fpr > max_fpr) {
      const double t = (max_fpr - a.fpr) / (b.fpr - a.fpr);
      b = {max_fpr, a.tpr + t * (b.tpr - a.tpr)};
    }
    area += 0.5 * (b.fpr - a.fpr) * (a.tpr + b.tpr);
  }
  return area;
}

double mcclish(double area, double max_fpr) {
  const double lo = 0.5 * max_fpr * max_fpr;
  return 0.5 * (1.0 + (area - lo) / (max_fpr - lo));
}

void check_fpr(double max_fpr) {
  if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw InvalidArgument("max_fpr must lie in (0, 1]");
}

}  // namespace

double frame_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i]) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) (labels[order[i++]] ? tp : fp) += 1;
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return pts;
}

double mpauc(std::span<const double> scores, std::span<const std::uint8_t> labels, double max_fpr) {
  check_fpr(max_fpr);
  return mcclish(partial_area(roc_curve(scores, labels), max_fpr), max_fpr);
}

double spearman_rho(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  if (scores.size() < 3) throw UndefinedMetric("spearman_rho needs at least 3 frames");
  std::vector<double> lab(labels.begin(), labels.end());
  return pearson(average_ranks(scores), average_ranks(lab));
}

Recall recall_at_k(const Matrix& sim, std::size_t k) {
  const std::size_t n = sim.rows();
  if (sim.cols() != n || n == 0) throw InvalidArgument("recall_at_k: similarity must be square and non-empty");
  if (k == 0 || k > n) throw InvalidArgument("recall_at_k: k must lie in [1, N]");
  auto rank_of = [&](auto value_at, std::size_t target) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value_at(a) > value_at(b); });
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin());
  };
  std::size_t a2t = 0, t2a = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rank_of([&](std::size_t j) { return sim(i, j); }, i) < k) ++a2t;
    if (rank_of([&](std::size_t j) { return sim(j, i); }, i) < k) ++t2a;
  }
  return {static_cast<double>(t2a) / static_cast<double>(n), static_cast<double>(a2t) / static_cast<double>(n)};
}

namespace oracle {

double auroc_pairwise(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double mpauc_threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             double max_fpr) {
  check_fpr(max_fpr);
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  // Thresholds: every score value, predicting positive when s >= t.
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] ? tp : fp) += 1;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  // Integrate the piecewise-linear curve over [0, max_fpr] segment by
  // segment: the clipped segment [x0, x1] contributes its mean height.
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double fa = pts[i - 1].fpr, fb = pts[i].fpr;
    const double x0 = std::min(fa, max_fpr), x1 = std::min(fb, max_fpr);
    if (x1 <= x0) continue;
    auto height = [&](double x) { return pts[i - 1].tpr + (pts[i].tpr - pts[i - 1].tpr) * (x - fa) / (fb - fa); };
    area += (x1 - x0) * (height(x0) + height(x1)) / 2.0;
  }
  const double chance = max_fpr * max_fpr / 2.0;
  return (1.0 + (area - chance) / (max_fpr - chance)) / 2.0;
}

double spearman_direct(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  if (scores.size() < 3) throw UndefinedMetric("spearman_rho needs at least 3 frames");
  auto rank = [](auto&& v, std::size_t n) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double less = 0.0, equal = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (v(j) < v(i)) less += 1.0;
        else if (v(j) == v(i)) equal += 1.0;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const std::size_t n = scores.size();
  const auto rs = rank([&](std::size_t j) { return scores[j]; }, n);
  const auto rl = rank([&](std::size_t j) { return static_cast<double>(labels[j]); }, n);
  return pearson(rs, rl);
}

Recall recall_exhaustive(const Matrix& sim, std::size_t k) {
  const std::size_t n = sim.rows();
  if (sim.cols() != n || n == 0) throw InvalidArgument("recall_at_k: similarity must be square and non-empty");
  if (k == 0 || k > n) throw InvalidArgument("recall_at_k: k must lie in [1, N]");
  std::size_t a2t = 0, t2a = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ahead_row = 0, ahead_col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sim(i, j) > sim(i, i) || (sim(i, j) == sim(i, i) && j < i)) ++ahead_row;
      if (sim(j, i) > sim(i, i) || (sim(j, i) == sim(i, i) && j < i)) ++ahead_col;
    }
    if (ahead_row < k) ++a2t;
    if (ahead_col < k) ++t2a;
  }
  return {static_cast<double>(t2a) / static_cast<double>(n), static_cast<double>(a2t) / static_cast<double>(n)};
}

}  // namespace oracle

}  // namespace flamkit
