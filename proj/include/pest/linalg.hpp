#ifndef PEST_LINALG_HPP_
#define PEST_LINALG_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pest/error.hpp"

namespace pest {

/// Raw dense vector (unencoded samples, gradients, pre-normalized outputs).
class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit Vec(std::vector<double> data) : data_(std::move(data)) {}
  Vec(std::initializer_list<double> init) : data_(init) {}

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const Vec&, const Vec&) = default;

 private:
  std::vector<double> data_;
};

/// Unit-norm embedding. Only constructible through l2_normalize (or the
/// checked `from_unit`), so every instance satisfies |‖v‖ - 1| <= 1e-9.
class FeatureVec {
 public:
  FeatureVec() = default;

  std::size_t dim() const { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  Vec to_vec() const { return Vec(data_); }

  /// Wraps an already-normalized vector; throws ZeroNorm if it is not unit.
  static FeatureVec from_unit(std::vector<double> data);

  friend bool operator==(const FeatureVec&, const FeatureVec&) = default;

 private:
  explicit FeatureVec(std::vector<double> data) : data_(std::move(data)) {}
  friend FeatureVec l2_normalize(std::span<const double> v);

  std::vector<double> data_;
};

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::ShapeMismatch,
            "matrix data length does not match rows*cols");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kZeroNormThreshold = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimMismatch,
          "dot of dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const FeatureVec& a, const FeatureVec& b) { return dot(a.span(), b.span()); }

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline FeatureVec l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > kZeroNormThreshold)) {
    fail(ErrorCode::ZeroNorm, "cannot normalize vector with norm " + std::to_string(n));
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return FeatureVec(std::move(out));
}

inline FeatureVec l2_normalize(const Vec& v) { return l2_normalize(v.span()); }

inline FeatureVec FeatureVec::from_unit(std::vector<double> data) {
  const double n = norm(data);
  require(std::abs(n - 1.0) <= 1e-9, ErrorCode::ZeroNorm, "vector is not unit norm");
  return FeatureVec(std::move(data));
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), ErrorCode::DimMismatch, "axpy dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), ErrorCode::DimMismatch,
          "matvec: matrix has " + std::to_string(m.cols()) + " cols, vector dim " +
              std::to_string(x.size()));
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    out[r] = s;
  }
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::DimMismatch, "matmul inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits (not the scaled logits)
};

/// -log softmax(logits / temperature)[label] and its gradient.
inline CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label,
                                          double temperature) {
  if (!(temperature > 0.0)) {
    fail(ErrorCode::NonPositiveTemperature, "temperature must be > 0");
  }
  require(label < logits.size(), ErrorCode::BadLabel,
          "label " + std::to_string(label) + " out of range for " +
              std::to_string(logits.size()) + " logits");
  require(all_finite(logits), ErrorCode::NumericError, "non-finite logit");

  const std::size_t top = argmax(logits);
  const double top_scaled = logits[top] / temperature;

  std::vector<double> shifted(logits.size());
  double rest = 0.0;  // sum of exp over every entry except `top`
  for (std::size_t j = 0; j < logits.size(); ++j) {
    shifted[j] = std::exp(logits[j] / temperature - top_scaled);
    if (j != top) rest += shifted[j];
  }
  const double total = 1.0 + rest;

  CrossEntropy out;
  out.loss = std::log1p(rest) + (top_scaled - logits[label] / temperature);
  out.grad.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double p = shifted[j] / total;
    out.grad[j] = (p - (j == label ? 1.0 : 0.0)) / temperature;
  }
  return out;
}

}  // namespace pest

#endif  // PEST_LINALG_HPP_
