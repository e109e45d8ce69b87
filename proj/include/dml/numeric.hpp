#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

#include "dml/error.hpp"

namespace dml {

/// Dense storage used throughout the library. Every kernel works in double
/// precision; the finite-difference oracle needs it.
template <typename Scalar>
using VecT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec = VecT<double>;
using Mat = MatT<double>;

/// Throws DimensionError unless `a` and `b` have the same number of elements.
template <typename A, typename B>
void require_same_size(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                       const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!all_finite(x)) throw DimensionError(std::string(what) + ": non-finite entry");
}

template <typename A, typename B>
typename A::Scalar squared_euclidean(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_size(a, b, "squared_euclidean");
  return (a - b).squaredNorm();
}

template <typename A, typename B>
typename A::Scalar euclidean(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_size(a, b, "euclidean");
  return (a - b).norm();
}

template <typename A, typename B>
typename A::Scalar cosine_sim(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_size(a, b, "cosine_sim");
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na == 0 || nb == 0) throw DegenerateError("cosine_sim: zero-norm input");
  using std::clamp;
  return std::clamp(a.dot(b) / (na * nb), typename A::Scalar(-1), typename A::Scalar(1));
}

/// Numerically stable log(sum(exp(xs))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& xs) {
  if (xs.size() == 0) throw DimensionError("log_sum_exp: empty input");
  const auto m = xs.maxCoeff();
  if (xs.size() == 1) return m;
  if (!std::isfinite(m)) return m;
  return m + std::log((xs.derived().array() - m).exp().sum());
}

/// Max-shifted softmax.
template <typename Derived>
VecT<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw DimensionError("softmax: empty input");
  using Scalar = typename Derived::Scalar;
  VecT<Scalar> out = (logits.array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

/// Row-wise softmax of a matrix of logits.
Mat softmax_rows(const Mat& logits);

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& xs) {
  if (xs.size() == 0) throw DimensionError("argmax: empty input");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < xs.size(); ++i) {
    if (xs(i) > xs(best)) best = i;
  }
  return best;
}

/// Unit-norm copy of every row.
Mat normalize_rows(const Mat& m);

/// Pulls a gradient taken w.r.t. normalized rows back to the raw rows:
/// g_raw = (g - x̂ (x̂·g)) / ‖x‖ for each row.
Mat normalize_rows_backward(const Mat& raw, const Mat& grad_normalized);

/// Central-difference gradient of `f` at `x`:
///   (f(x + h e_i) - f(x - h e_i)) / 2h   for every coordinate i.
/// Throws OracleError naming the coordinate when f is non-finite.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5);

/// Same as fd_gradient, for functions of a matrix.
Mat fd_gradient(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-5);

/// Error metric used by every gradient check: the relative error
/// ‖a − b‖∞ / max(‖a‖∞, ‖b‖∞), or the absolute error when both gradients are
/// tiny (max magnitude below `tiny`).
struct GradientAgreement {
  double max_abs_error = 0;
  double max_rel_error = 0;
  bool used_absolute = false;
  bool ok = false;
};

GradientAgreement compare_gradients(const Mat& analytic, const Mat& numeric, double rel_tol = 1e-4,
                                    double abs_tol = 1e-8, double tiny = 1e-6);

}  // namespace dml
