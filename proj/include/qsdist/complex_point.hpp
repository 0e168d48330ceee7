#pragma once

#include <cmath>
#include <complex>
#include <string>

#include "qsdist/error.hpp"

namespace qsdist {

using cplx = std::complex<double>;

inline bool is_finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

/// A point s = re + i·im of the complex plane. Construction rejects NaN/Inf.
class ComplexPoint {
 public:
  ComplexPoint(double re, double im) : re_(re), im_(im) {
    require(std::isfinite(re) && std::isfinite(im), ErrorKind::NonFinite,
            "complex point (" + std::to_string(re) + ", " + std::to_string(im) + ")");
  }
  explicit ComplexPoint(cplx z) : ComplexPoint(z.real(), z.imag()) {}

  double re() const { return re_; }
  double im() const { return im_; }
  cplx value() const { return {re_, im_}; }

  friend bool operator==(const ComplexPoint&, const ComplexPoint&) = default;

 private:
  double re_;
  double im_;
};

}  // namespace qsdist
