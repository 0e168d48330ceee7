#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"

namespace qsdist {

/// Condition imposed at the left knot.
///   Natural:   S'' = 0 for both components.
///   Hermitian: for functions with f(-t) = conj f(t) sampled from t0 = 0,
///              Re S' = 0 (even part) and Im S'' = 0 (odd part).
enum class SplineLeftBoundary { Natural, Hermitian };

/// Cubic spline through complex values on a uniform grid t_j = t0 + j·h.
/// Natural condition at the right end. Evaluation outside [t0, tN] throws.
class ComplexSpline {
 public:
  ComplexSpline(double t0, double h, std::vector<cplx> values,
                SplineLeftBoundary left = SplineLeftBoundary::Natural)
      : t0_(t0), h_(h), values_(std::move(values)), left_(left) {
    require(values_.size() >= 4, ErrorKind::DegenerateGrid, "spline needs at least 4 knots");
    require(h_ > 0 && std::isfinite(h_) && std::isfinite(t0_), ErrorKind::DegenerateGrid,
            "spline step must be positive and finite");
    for (const cplx& v : values_) require(is_finite(v), ErrorKind::NonFinite, "spline knot value");
    const std::size_t n = values_.size();
    std::vector<double> re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = values_[i].real();
      im[i] = values_[i].imag();
    }
    const auto m_re = second_derivatives(re, left_ == SplineLeftBoundary::Hermitian);
    const auto m_im = second_derivatives(im, false);
    m_.resize(n);
    for (std::size_t i = 0; i < n; ++i) m_[i] = {m_re[i], m_im[i]};
  }

  double t0() const { return t0_; }
  double step() const { return h_; }
  double t_end() const { return t0_ + h_ * double(values_.size() - 1); }
  std::size_t knots() const { return values_.size(); }
  std::span<const cplx> values() const { return values_; }
  std::span<const cplx> second_derivatives() const { return m_; }
  SplineLeftBoundary left_boundary() const { return left_; }

  cplx operator()(double t) const {
    const double end = t_end();
    const double slack = 1e-12 * std::max(1.0, std::abs(end));
    if (!(t >= t0_ - slack && t <= end + slack))
      fail(ErrorKind::OutOfRange, "spline evaluated at t = " + std::to_string(t) + " outside [" +
                                      std::to_string(t0_) + ", " + std::to_string(end) + "]");
    const std::size_t last = values_.size() - 1;
    double u = (t - t0_) / h_;
    if (u < 0) u = 0;
    std::size_t i = static_cast<std::size_t>(u);
    if (i >= last) i = last - 1;
    const double b = u - double(i);
    const double a = 1.0 - b;
    const double c = (a * a * a - a) * h_ * h_ / 6.0;
    const double d = (b * b * b - b) * h_ * h_ / 6.0;
    return a * values_[i] + b * values_[i + 1] + c * m_[i] + d * m_[i + 1];
  }

 private:
  // Tridiagonal solve (Thomas) for the knot second derivatives.
  std::vector<double> second_derivatives(const std::vector<double>& y, bool clamp_zero_slope) const {
    const std::size_t n = y.size();
    std::vector<double> diag(n), upper(n), lower(n), rhs(n);
    const double inv_h2 = 6.0 / (h_ * h_);
    if (clamp_zero_slope) {
      diag[0] = 2.0;
      upper[0] = 1.0;
      rhs[0] = inv_h2 * (y[1] - y[0]);
    } else {
      diag[0] = 1.0;
      upper[0] = 0.0;
      rhs[0] = 0.0;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      lower[i] = 1.0;
      diag[i] = 4.0;
      upper[i] = 1.0;
      rhs[i] = inv_h2 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
    }
    lower[n - 1] = 0.0;
    diag[n - 1] = 1.0;
    rhs[n - 1] = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double w = lower[i] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    std::vector<double> m(n);
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    return m;
  }

  double t0_;
  double h_;
  std::vector<cplx> values_;
  std::vector<cplx> m_;
  SplineLeftBoundary left_;
};

/// Natural cubic spline through (grid, values); grid must be uniform to 1e-12 relative.
inline ComplexSpline spline_fit(std::span<const double> grid, std::span<const cplx> values,
                                SplineLeftBoundary left = SplineLeftBoundary::Natural) {
  require(grid.size() >= 4, ErrorKind::DegenerateGrid, "spline needs at least 4 knots");
  require(grid.size() == values.size(), ErrorKind::InvalidArgument, "grid and values differ in length");
  const double h = (grid.back() - grid.front()) / double(grid.size() - 1);
  require(h > 0, ErrorKind::DegenerateGrid, "grid must be increasing");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(std::abs((grid[i] - grid[i - 1]) - h) <= 1e-12 * std::abs(h) +
                                                         4 * std::numeric_limits<double>::epsilon() *
                                                             std::max(std::abs(grid[i]), std::abs(grid[i - 1])),
            ErrorKind::DegenerateGrid, "grid spacing is not uniform");
  return ComplexSpline(grid.front(), h, std::vector<cplx>(values.begin(), values.end()), left);
}

}  // namespace qsdist
