#include "dml/numeric.hpp"

#include <algorithm>

namespace dml {

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out.row(r) = softmax(logits.row(r).transpose()).transpose();
  }
  return out;
}

Mat normalize_rows(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n == 0) throw DegenerateError("normalize_rows: zero-norm row " + std::to_string(r));
    out.row(r) = m.row(r) / n;
  }
  return out;
}

Mat normalize_rows_backward(const Mat& raw, const Mat& grad_normalized) {
  if (raw.rows() != grad_normalized.rows() || raw.cols() != grad_normalized.cols()) {
    throw DimensionError("normalize_rows_backward: shape mismatch");
  }
  Mat out(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const double n = raw.row(r).norm();
    if (n == 0) throw DegenerateError("normalize_rows_backward: zero-norm row " + std::to_string(r));
    const auto unit = raw.row(r) / n;
    const auto g = grad_normalized.row(r);
    out.row(r) = (g - unit * unit.dot(g)) / n;
  }
  return out;
}

namespace {

template <typename Param>
Param central_differences(const std::function<double(const Param&)>& f, const Param& x, double h) {
  if (!(h > 0)) throw ConfigError("fd_gradient: step size must be positive");
  Param probe = x;
  Param grad(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const double up = f(probe);
    probe.data()[i] = saved - h;
    const double down = f(probe);
    probe.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError("fd_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    }
    grad.data()[i] = (up - down) / (2 * h);
  }
  return grad;
}

}  // namespace

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  return central_differences<Vec>(f, x, h);
}

Mat fd_gradient(const std::function<double(const Mat&)>& f, const Mat& x, double h) {
  return central_differences<Mat>(f, x, h);
}

GradientAgreement compare_gradients(const Mat& analytic, const Mat& numeric, double rel_tol,
                                    double abs_tol, double tiny) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionError("compare_gradients: shape mismatch");
  }
  GradientAgreement out;
  if (analytic.size() == 0) {
    out.ok = true;
    return out;
  }
  if (!all_finite(analytic) || !all_finite(numeric)) return out;
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  out.max_abs_error = (analytic - numeric).cwiseAbs().maxCoeff();
  out.max_rel_error = scale > 0 ? out.max_abs_error / scale : 0.0;
  if (numeric.cwiseAbs().maxCoeff() < tiny) {
    out.used_absolute = true;
    out.ok = out.max_abs_error < abs_tol;
  } else {
    out.ok = out.max_rel_error < rel_tol;
  }
  return out;
}

}  // namespace dml
