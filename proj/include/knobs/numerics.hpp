#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "knobs/errors.hpp"

namespace knobs {

// Dense row-major matrix of doubles. Shapes are checked on every operation;
// nothing broadcasts silently.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;
  Matrix transpose() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& x);
double relu(double x);

// out[r×n] += a[r×k] · b[k×n], all row-major. The workhorse behind matmul and
// the model code; callers own shapes.
void gemm_accumulate(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t r, std::size_t k, std::size_t n);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, AdamHyper h = {});
};

// One bias-corrected Adam update in place.
void adam_step(Matrix& params, const Matrix& grads, AdamState& state);

// Span form for flat parameter buffers; moment buffers must match params.
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, std::int64_t& step, const AdamHyper& hyper);

// Counter-based SplitMix64 stream. Identical seeds give identical streams on
// every platform, which std::normal_distribution does not guarantee.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t below(std::size_t n);          // [0, n)

  // Independent child stream; does not advance this one.
  SeededRng fork(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace knobs
