#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsdist/continuation.hpp"
#include "qsdist/laplace.hpp"

namespace qsdist {

enum class BoundId {
  EQ1_SHIFT,
  EQ2_ASYMPTOTIC,
  LEMMA1_DERIV,
  LEMMA2_LOWER,
  LEMMA3_SUP,
  LEMMA4_STRIP,
  LEMMA5_REGION,
  ENVELOPE,
};

inline const char* to_string(BoundId id) {
  switch (id) {
    case BoundId::EQ1_SHIFT: return "EQ1_SHIFT";
    case BoundId::EQ2_ASYMPTOTIC: return "EQ2_ASYMPTOTIC";
    case BoundId::LEMMA1_DERIV: return "LEMMA1_DERIV";
    case BoundId::LEMMA2_LOWER: return "LEMMA2_LOWER";
    case BoundId::LEMMA3_SUP: return "LEMMA3_SUP";
    case BoundId::LEMMA4_STRIP: return "LEMMA4_STRIP";
    case BoundId::LEMMA5_REGION: return "LEMMA5_REGION";
    case BoundId::ENVELOPE: return "ENVELOPE";
  }
  return "?";
}

inline std::optional<BoundId> bound_id_from_string(const std::string& s) {
  for (BoundId id : {BoundId::EQ1_SHIFT, BoundId::EQ2_ASYMPTOTIC, BoundId::LEMMA1_DERIV, BoundId::LEMMA2_LOWER,
                     BoundId::LEMMA3_SUP, BoundId::LEMMA4_STRIP, BoundId::LEMMA5_REGION, BoundId::ENVELOPE})
    if (s == to_string(id)) return id;
  if (s == "EQ1") return BoundId::EQ1_SHIFT;
  if (s == "EQ2") return BoundId::EQ2_ASYMPTOTIC;
  return std::nullopt;
}

struct BoundSample {
  double re = 0;
  double im = 0;
  int order = 0;
  double measured = 0;
  double allowed = 0;
  double err = 0;
  double margin() const { return measured - allowed; }
};

/// One checked inequality measured <= allowed over sample points. A sample
/// passes when its margin is within its own error budget (strict reports need
/// measured + err < allowed). Budgets are estimates, not rigorous enclosures.
struct BoundReport {
  BoundId id = BoundId::EQ1_SHIFT;
  std::vector<BoundSample> samples;
  bool strict = false;
  double worst_margin = -std::numeric_limits<double>::infinity();
  double tolerance = 0;
  bool pass = false;
  nlohmann::ordered_json constants = nlohmann::ordered_json::object();

  void add(double re, double im, int order, double measured, double allowed, double err) {
    samples.push_back(BoundSample{re, im, order, measured, allowed, err});
  }

  BoundReport& finalize() {
    pass = !samples.empty();
    worst_margin = -std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
      if (!(std::isfinite(s.measured) && std::isfinite(s.allowed) && std::isfinite(s.err))) pass = false;
      const bool ok = strict ? s.measured + s.err < s.allowed : s.margin() <= s.err;
      pass = pass && ok;
      if (s.margin() > worst_margin) {
        worst_margin = s.margin();
        tolerance = s.err;
      }
    }
    return *this;
  }

  const BoundSample& worst() const {
    return *std::max_element(samples.begin(), samples.end(),
                             [](const BoundSample& a, const BoundSample& b) { return a.margin() < b.margin(); });
  }
};

inline nlohmann::ordered_json to_json(const BoundReport& r) {
  nlohmann::ordered_json j;
  j["bound"] = to_string(r.id);
  j["tolerance"] = r.tolerance;
  j["worst_margin"] = r.worst_margin;
  j["pass"] = r.pass;
  j["strict"] = r.strict;
  j["error_budgets"] = "estimates (no interval arithmetic)";
  j["constants"] = r.constants;
  auto samples = nlohmann::ordered_json::array();
  auto orders = nlohmann::ordered_json::array();
  bool has_orders = false;
  for (const auto& s : r.samples) {
    samples.push_back({s.re, s.im, s.measured, s.allowed, s.err});
    orders.push_back(s.order);
    has_orders = has_orders || s.order != 0;
  }
  j["samples"] = std::move(samples);
  if (has_orders) j["sample_orders"] = std::move(orders);
  return j;
}

// ---------------------------------------------------------------------------
// -ψ'(s) = ψ²(s-i)
// ---------------------------------------------------------------------------

/// 20 points with Re s in [0.5, 3], |Im s| <= 5.
inline std::vector<cplx> default_eq1_points(std::uint64_t seed = 20240513) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> re(0.5, 3.0), im(-5.0, 5.0);
  std::vector<cplx> pts;
  for (int k = 0; k < 20; ++k) {
    const double a = re(rng);
    pts.emplace_back(a, im(rng));
  }
  return pts;
}

inline BoundReport certify_shift_equation(const LaplaceEngine& eng, const std::vector<cplx>& points) {
  BoundReport r;
  r.id = BoundId::EQ1_SHIFT;
  for (cplx s : points) {
    const ShiftCheck c = shift_residual(eng, s);
    r.add(s.real(), s.imag(), 1, c.residual, 0.0, c.budget);
  }
  r.constants["grid_residual"] = eng.grid_residual();
  const OneStepShift o = one_step_shift_check(eng, cplx(1, 0.5));
  r.constants["one_step_residual_at_1+0.5i"] = o.residual;
  r.constants["one_step_budget_at_1+0.5i"] = o.budget;
  return r.finalize();
}

// ---------------------------------------------------------------------------
// |ψ(s)| <= A(1 + |log σ|/σ)/|s|
// ---------------------------------------------------------------------------

inline double c_sigma(double a, double sigma) { return a * (1.0 + std::abs(std::log(sigma)) / sigma); }

struct Calibration {
  double a = 0;
  ComplexPoint argmax{1.0, 0.0};
  std::size_t points = 0;
};

/// Smallest A with |s ψ(s)| <= A(1+|log σ|/σ) on 10 log-spaced σ in [0.1, 10]
/// times 20 uniform y in [-50, 50].
inline Calibration calibrate_a(const LaplaceEngine& eng) {
  Calibration c;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 20; ++j) {
      const double sigma = 0.1 * std::pow(100.0, i / 9.0);
      const double y = -50.0 + 100.0 * j / 19.0;
      const cplx s(sigma, y);
      const double ratio = std::abs(s * eng.psi(s).value) / (1.0 + std::abs(std::log(sigma)) / sigma);
      if (ratio > c.a) {
        c.a = ratio;
        c.argmax = ComplexPoint(s);
      }
      ++c.points;
    }
  return c;
}

/// Validation of the calibrated A on the offset grid (log-midpoints in σ,
/// midpoints in y), plus the leading-order check |100 ψ(100) - 1|.
inline BoundReport certify_asymptotic(const LaplaceEngine& eng, const Calibration& cal) {
  BoundReport r;
  r.id = BoundId::EQ2_ASYMPTOTIC;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 19; ++j) {
      const double sigma = 0.1 * std::pow(100.0, (i + 0.5) / 9.0);
      const double y = -50.0 + 100.0 * (j + 0.5) / 19.0;
      const cplx s(sigma, y);
      const PsiSample p = eng.psi(s);
      r.add(sigma, y, 0, std::abs(p.value), c_sigma(cal.a, sigma) / std::abs(s), p.err_est);
    }
  const PsiSample p100 = eng.psi(cplx(100, 0));
  r.add(100, 0, 0, std::abs(100.0 * p100.value - 1.0), 0.1, 100 * p100.err_est);
  r.constants["A"] = cal.a;
  r.constants["A_calibrated"] = true;
  r.constants["A_argmax"] = {cal.argmax.re(), cal.argmax.im()};
  r.constants["calibration_points"] = cal.points;
  return r.finalize();
}

// ---------------------------------------------------------------------------
// Lemma 1 / Lemma 2 derivative bounds
// ---------------------------------------------------------------------------

inline std::vector<cplx> default_deriv_points() {
  return {{1, -2}, {2, -1}, {0.5, 3}, {1, 0}, {2, 0}, {3, -4}, {0.7, 1}, {1.5, -0.5}, {0.3, -2}, {4, 2}};
}

struct DerivReports {
  BoundReport lemma1;
  BoundReport lemma2;
};

inline DerivReports certify_deriv_bounds(const LaplaceEngine& eng, const std::vector<cplx>& points, int n_max,
                                         double a) {
  require(n_max >= 0 && n_max <= 4, ErrorKind::InvalidArgument, "derivative bounds checked for n <= 4");
  DerivReports out;
  out.lemma1.id = BoundId::LEMMA1_DERIV;
  out.lemma2.id = BoundId::LEMMA2_LOWER;
  for (cplx s : points) {
    require(s.real() >= eng.sigma_min(), ErrorKind::SigmaTooSmall, "derivative bounds need Re s >= sigma_min");
    const std::vector<PsiSample> d = eng.psi_upto(s, n_max);
    std::vector<PsiSample> shifted;
    for (int r = 0; r <= n_max; ++r) shifted.push_back(eng.psi(s - cplx(0, r)));
    double fact = 1;
    for (int n = 0; n <= n_max; ++n) {
      if (n > 0) fact *= n;
      double m = 0, me = 0;
      for (int r = 0; r <= n; ++r)
        if (std::abs(shifted[r].value) >= m) {
          m = std::abs(shifted[r].value);
          me = shifted[r].err_est;
        }
      const double allowed = fact * std::pow(m, n + 1);
      const double allowed_err = fact * (n + 1) * std::pow(m + me, n) * me;
      out.lemma1.add(s.real(), s.imag(), n, std::abs(d[n].value), allowed, d[n].err_est + allowed_err);
      if (s.imag() < 0) {
        const double c = c_sigma(a, s.real()) / std::abs(s);
        out.lemma2.add(s.real(), s.imag(), n, std::abs(d[n].value), fact * std::pow(c, n + 1), d[n].err_est);
      }
    }
  }
  out.lemma1.finalize();
  out.lemma2.constants["A"] = a;
  out.lemma2.constants["C(sigma)"] = "A(1+|log sigma|/sigma)";
  out.lemma2.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// Lemma 3: sup_y |ψ(σ+iy)| < 1/σ
// ---------------------------------------------------------------------------

struct SupReport {
  BoundReport report;
  double sigma = 0;
  double sup = 0;
  double argsup = 0;
  double sup_err = 0;
  std::optional<double> eps_hat;  // 1 - sup at σ = 1
};

using PsiFunction = std::function<PsiSample(cplx)>;

inline SupReport certify_sup_bound(const PsiFunction& psi, double sigma, double y_lo, double y_hi, double step) {
  require(step > 0 && step <= 0.25, ErrorKind::InvalidArgument, "sup scan step must lie in (0, 0.25]");
  require(y_lo < y_hi, ErrorKind::InvalidArgument, "empty sup scan range");
  SupReport out;
  out.sigma = sigma;
  BoundReport& r = out.report;
  r.id = BoundId::LEMMA3_SUP;
  r.strict = true;
  const double floor = 64 * std::numeric_limits<double>::epsilon() / sigma;
  const long n = std::lround((y_hi - y_lo) / step);
  for (long k = 0; k <= n; ++k) {
    const double y = y_lo + double(k) * step;
    const PsiSample p = psi(cplx(sigma, y));
    const double v = std::abs(p.value);
    r.add(sigma, y, 0, v, 1.0 / sigma - floor, p.err_est);
    if (v > out.sup) {
      out.sup = v;
      out.argsup = y;
      out.sup_err = p.err_est;
    }
  }
  r.finalize();
  if (sigma == 1.0) out.eps_hat = 1.0 - out.sup;
  r.constants["sigma"] = sigma;
  r.constants["sup"] = out.sup;
  r.constants["argsup"] = out.argsup;
  r.constants["sup_err"] = out.sup_err;
  r.constants["rounding_floor"] = floor;
  if (out.eps_hat) r.constants["eps_hat"] = *out.eps_hat;
  return out;
}

inline SupReport certify_sup_bound(const LaplaceEngine& eng, double sigma, double y_lo = -50, double y_hi = 50,
                                   double step = 0.1) {
  require(sigma >= eng.sigma_min(), ErrorKind::SigmaTooSmall, "sup scan needs sigma >= sigma_min");
  return certify_sup_bound([&](cplx s) { return eng.psi(s); }, sigma, y_lo, y_hi, step);
}

// ---------------------------------------------------------------------------
// Lemma 4 strip bound and Lemma 5 |s ψ(s)| <= M
// ---------------------------------------------------------------------------

struct StripReports {
  BoundReport lemma4;
  BoundReport lemma5;
  double m_const = 0;
};

struct StripInputs {
  std::optional<double> eps_hat;
  double argsup = 0;  // y at which |ψ(1+iy)| was largest
};

inline StripReports certify_strip_bounds(ContinuationCache& cache, const StripInputs& in) {
  if (!in.eps_hat) fail(ErrorKind::EpsilonUnavailable, "run the sigma = 1 sup scan first");
  const double eps = *in.eps_hat;
  if (!(eps > 0)) fail(ErrorKind::EpsilonUnavailable, "eps_hat must be positive");
  StripReports out;
  const double lo = -eps / (1 - eps) / 2, hi = 1 + 1 / (1 - eps) / 2;
  auto value = [&](double re, double im) { return continue_psi(ComplexPoint(re, im), cache); };

  BoundReport& l4 = out.lemma4;
  l4.id = BoundId::LEMMA4_STRIP;
  auto bound4 = [&](double re) { return (1 - eps) / (1 - std::abs(re - 1) * (1 - eps)); };
  std::vector<double> sigmas;
  for (int k = 1; k < 8; ++k) sigmas.push_back(lo + (hi - lo) * k / 8.0);
  sigmas.push_back(-eps / 4);
  sigmas.push_back(1.0);
  const std::vector<double> ys{-40, -20, -5, -1, 0, 1, 5, 20, 40};
  for (double re : sigmas)
    for (double im : ys) {
      const PsiSample p = value(re, im);
      l4.add(re, im, 0, std::abs(p.value), bound4(re), p.err_est);
    }
  {
    const PsiSample p = value(1.0, in.argsup);
    l4.add(1.0, in.argsup, 0, std::abs(p.value), 1 - eps, p.err_est);
    const PsiSample q = value(0.5, 40);
    l4.add(0.5, 40, 0, std::abs(q.value), bound4(0.5), q.err_est);
  }
  l4.constants["eps_hat"] = eps;
  l4.constants["strip"] = {lo, hi};
  l4.constants["argsup"] = in.argsup;
  l4.finalize();

  // M calibrated on |Im s| <= 50, validated on 50 < |Im s| <= 100
  BoundReport& l5 = out.lemma5;
  l5.id = BoundId::LEMMA5_REGION;
  const double eps1 = eps / 2;
  const std::vector<double> res{-eps / 4, 0.0, 0.25, 0.5, 1.0};
  double m = 0;
  for (double re : res)
    for (int im = -50; im <= 50; ++im) {
      const PsiSample p = value(re, im);
      m = std::max(m, std::abs(cplx(re, im) * p.value) + std::abs(cplx(re, im)) * p.err_est);
    }
  for (double re : res)
    for (int im : {-100, -90, -80, -70, -60, 60, 70, 80, 90, 100}) {
      const PsiSample p = value(re, im);
      const double sabs = std::abs(cplx(re, im));
      l5.add(re, im, 0, sabs * std::abs(p.value), m, sabs * p.err_est);
    }
  out.m_const = m;
  l5.constants["M"] = m;
  l5.constants["M_calibrated_on"] = "|Im s| <= 50";
  l5.constants["eps_prime"] = eps1;
  l5.constants["region_left_edge"] = -eps1 / (1 - eps1);
  l5.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// branch (b) against direct quadrature on σ_min <= Re s <= 1
// ---------------------------------------------------------------------------

struct ConsistencyCheck {
  std::vector<PsiSample> continued;
  std::vector<PsiSample> direct;
  bool pass = false;
  double worst_ratio = 0;  // |difference| / combined budget
};

inline ConsistencyCheck continuation_consistency(ContinuationCache& cache, int count = 10,
                                                 std::uint64_t seed = 7) {
  const LaplaceEngine& eng = cache.engine();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> re(eng.sigma_min(), 1.0), im(-10.0, 10.0);
  ConsistencyCheck c;
  c.pass = true;
  for (int k = 0; k < count; ++k) {
    const double a = re(rng);
    const cplx s(a, im(rng));
    const PsiSample b = continue_psi_forced(ComplexPoint(s), cache);
    const PsiSample d = eng.psi(s);
    const double ratio = std::abs(b.value - d.value) / (b.err_est + d.err_est);
    c.worst_ratio = std::max(c.worst_ratio, ratio);
    c.pass = c.pass && ratio <= 1.0;
    c.continued.push_back(b);
    c.direct.push_back(d);
  }
  return c;
}

}  // namespace qsdist
