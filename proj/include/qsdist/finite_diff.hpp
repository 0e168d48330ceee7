#pragma once

#include <cmath>

#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"

namespace qsdist {

/// Fourth-order central difference of f at s along a unit direction:
/// (-f(s+2hd) + 8f(s+hd) - 8f(s-hd) + f(s-2hd)) / (12h), which approximates d·f'(s)
/// for analytic f.
template <class F>
cplx central_diff(F&& f, cplx s, double h, cplx direction = 1.0) {
  require(h > 0 && std::isfinite(h), ErrorKind::InvalidArgument, "central_diff step must be positive");
  require(std::abs(std::abs(direction) - 1.0) < 1e-12, ErrorKind::InvalidArgument,
          "central_diff direction must be a unit complex number");
  const cplx d = direction * h;
  const cplx fp2 = f(s + 2.0 * d);
  const cplx fp1 = f(s + d);
  const cplx fm1 = f(s - d);
  const cplx fm2 = f(s - 2.0 * d);
  const cplx r = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
  require(is_finite(r), ErrorKind::NonFinite, "central_diff produced a non-finite value");
  return r;
}

/// One Richardson step on central_diff: (16·D(h/2) - D(h)) / 15, sixth order.
template <class F>
cplx richardson_diff(F&& f, cplx s, double h, cplx direction = 1.0) {
  const cplx coarse = central_diff(f, s, h, direction);
  const cplx fine = central_diff(f, s, 0.5 * h, direction);
  return (16.0 * fine - coarse) / 15.0;
}

}  // namespace qsdist
