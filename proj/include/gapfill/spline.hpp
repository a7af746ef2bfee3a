#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "gapfill/error.hpp"

namespace gapfill {

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. The system must be diagonally dominant.
template <typename Scalar>
std::vector<Scalar> solve_tridiagonal(std::span<const Scalar> lower, std::span<const Scalar> diag,
                                      std::span<const Scalar> upper, std::span<const Scalar> rhs) {
  const std::size_t n = diag.size();
  if (lower.size() != n || upper.size() != n || rhs.size() != n) throw ShapeError("tridiagonal: size mismatch");
  std::vector<Scalar> c(n), d(n);
  if (n == 0) return d;
  c[0] = upper[0] / diag[0];
  d[0] = rhs[0] / diag[0];
  for (std::size_t i = 1; i < n; ++i) {
    const Scalar denom = diag[i] - lower[i] * c[i - 1];
    c[i] = upper[i] / denom;
    d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
  return d;
}

/// Interpolating cubic spline with zero second derivative at both end knots.
/// Queries outside [x.front(), x.back()] return the nearest end value.
template <typename Scalar>
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<Scalar> x, std::vector<Scalar> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw PreconditionError("natural spline needs >= 2 knots with values");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(x_[i] > x_[i - 1])) throw PreconditionError("spline knots must be strictly increasing");
    }
    curvature_.assign(n, Scalar(0));
    if (n == 2) return;
    const std::size_t m = n - 2;
    std::vector<Scalar> lower(m), diag(m), upper(m), rhs(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = k + 1;
      const Scalar h0 = x_[i] - x_[i - 1];
      const Scalar h1 = x_[i + 1] - x_[i];
      lower[k] = h0;
      diag[k] = Scalar(2) * (h0 + h1);
      upper[k] = h1;
      rhs[k] = Scalar(6) * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    }
    const auto inner = solve_tridiagonal<Scalar>(lower, diag, upper, rhs);
    std::copy(inner.begin(), inner.end(), curvature_.begin() + 1);
  }

  Scalar operator()(Scalar q) const {
    if (q <= x_.front()) return y_.front();
    if (q >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), q);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const Scalar h = x_[i + 1] - x_[i];
    const Scalar a = (x_[i + 1] - q) / h;
    const Scalar b = (q - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * curvature_[i] + (b * b * b - b) * curvature_[i + 1]) * (h * h) / Scalar(6);
  }

  /// Second derivatives at the knots.
  const std::vector<Scalar>& curvature() const { return curvature_; }

 private:
  std::vector<Scalar> x_;
  std::vector<Scalar> y_;
  std::vector<Scalar> curvature_;
};

/// Piecewise-linear interpolant with the same clamping rule.
template <typename Scalar>
Scalar linear_interpolate(std::span<const Scalar> x, std::span<const Scalar> y, Scalar q) {
  if (q <= x.front()) return y.front();
  if (q >= x.back()) return y.back();
  const auto it = std::upper_bound(x.begin(), x.end(), q);
  const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
  const Scalar w = (q - x[i]) / (x[i + 1] - x[i]);
  return (Scalar(1) - w) * y[i] + w * y[i + 1];
}

}  // namespace gapfill
