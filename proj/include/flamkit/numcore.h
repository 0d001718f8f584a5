// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_NUMCORE_H_
#define FLAMKIT_NUMCORE_H_

#include <algorithm>
#include <cstddef>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flamkit {

// Error hierarchy shared by every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

// log(sigmoid(x)) without overflow for |x| up to several hundred.
// Per-text scale from its log: exp(log_alpha), evaluated relative to log 10
// so the initial scale is exactly 10.
inline double scale_from_log(double log_alpha) { return 10.0 * std::exp(log_alpha - 2.302585092994046); }

double log_sigmoid(double x);
double sigmoid(double x);

// Returns v / ||v||. Throws DegenerateVector when ||v|| <= 1e-12.
std::vector<double> l2_normalize(std::span<const double> v);

// Backward pass of y = v / ||v||: given y, ||v|| and dL/dy returns dL/dv.
std::vector<double> l2_normalize_backward(std::span<const double> y, double norm,
                                          std::span<const double> dy);

// Fixed-shape binary-tree summation. The tree depends only on the length, so
// the same sequence always reduces in the same order.
double pairwise_sum(std::span<const double> v);

// Adam hyperparameters and per-tensor moments.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct OptState {
  std::uint64_t step = 0;
  AdamConfig hp;
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update, in place. Accumulators are lazily sized on
// the first call; afterwards shapes must match.
void opt_step(std::span<double> params, std::span<const double> grads, OptState& state);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x,
                                     double h = 1e-5);

// Same, restricted to the given coordinates (result has one entry per index).
std::vector<double> finite_diff_grad_at(const ScalarFn& f, std::span<const double> x,
                                        std::span<const std::size_t> coords,
                                        double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace flamkit

#endif  // FLAMKIT_NUMCORE_H_
