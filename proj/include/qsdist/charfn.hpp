#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"
#include "qsdist/parallel.hpp"
#include "qsdist/quadrature.hpp"
#include "qsdist/spline.hpp"

namespace qsdist {

/// Convergence record of the fixed-point iteration that produced a grid.
struct FixpointTrace {
  int iteration_count = 0;
  double residual = 0.0;                 // sup-norm functional-equation residual
  std::vector<double> sup_differences;   // d_k = sup_j |f_{k}(t_j) - f_{k-1}(t_j)|
};

/// Characteristic function f(t) = E exp(itY) sampled at t_j = j·h, j = 0..N.
/// f(0) = 1 exactly and |f| <= 1 + 1e-9 at every knot; negative arguments are
/// served through f(-t) = conj f(t).
class GridCharFn {
 public:
  static constexpr double kModulusSlack = 1e-9;

  GridCharFn(double h, std::vector<cplx> values, FixpointTrace trace = {})
      : h_(h), trace_(std::move(trace)), spline_(0.0, h, check(h, values), SplineLeftBoundary::Hermitian) {
    require(trace_.residual >= 0 && std::isfinite(trace_.residual), ErrorKind::InvalidArgument,
            "grid residual must be finite and nonnegative");
    build_interp_indicator();
  }

  double step() const { return h_; }
  std::size_t size() const { return spline_.knots(); }
  double t_max() const { return h_ * double(size() - 1); }
  double knot_t(std::size_t j) const { return h_ * double(j); }
  std::span<const cplx> values() const { return spline_.values(); }
  cplx knot(std::size_t j) const { return spline_.values()[j]; }
  const ComplexSpline& spline() const { return spline_; }

  cplx operator()(double t) const { return t >= 0 ? spline_(t) : std::conj(spline_(-t)); }

  const FixpointTrace& trace() const { return trace_; }
  int iteration_count() const { return trace_.iteration_count; }
  double residual() const { return trace_.residual; }

  GridCharFn with_residual(double residual) const {
    FixpointTrace tr = trace_;
    tr.residual = residual;
    return GridCharFn(h_, std::vector<cplx>(values().begin(), values().end()), std::move(tr));
  }

  /// Estimated interpolation error of the spline on knot interval j,
  /// (5/384)·|Δ⁴f| with the Hermitian extension supplying negative knots.
  double interp_error(std::size_t interval) const { return interp_err_[interval]; }
  std::span<const double> interp_errors() const { return interp_err_; }

 private:
  static std::vector<cplx> check(double h, std::vector<cplx>& values) {
    require(h > 0 && std::isfinite(h), ErrorKind::DegenerateGrid, "grid step must be positive");
    require(values.size() >= 5, ErrorKind::DegenerateGrid, "grid needs at least 5 knots");
    require(values[0] == cplx(1.0, 0.0), ErrorKind::InvalidArgument, "f(0) must equal 1 exactly");
    for (std::size_t j = 0; j < values.size(); ++j) {
      require(is_finite(values[j]), ErrorKind::NonFinite, "grid value at knot " + std::to_string(j));
      require(std::abs(values[j]) <= 1.0 + kModulusSlack, ErrorKind::Overshoot,
              "|f| exceeds 1 at knot " + std::to_string(j));
    }
    return std::move(values);
  }

  void build_interp_indicator() {
    const auto v = values();
    const long n = static_cast<long>(v.size());
    auto at = [&](long j) { return j >= 0 ? v[j] : std::conj(v[-j]); };
    std::vector<double> d4(n);
    for (long j = 0; j < n; ++j) {
      long c = std::min(j, n - 3);  // centre of a stencil that fits on the right
      d4[j] = std::abs(at(c - 2) - 4.0 * at(c - 1) + 6.0 * at(c) - 4.0 * at(c + 1) + at(c + 2));
    }
    interp_err_.resize(n - 1);
    for (long j = 0; j + 1 < n; ++j) interp_err_[j] = (5.0 / 384.0) * std::max(d4[j], d4[j + 1]);
  }

  double h_;
  FixpointTrace trace_;
  ComplexSpline spline_;
  std::vector<double> interp_err_;
};

// ---------------------------------------------------------------------------
// Functional equation   f(t) = e^{it} ∫₀¹ f(tx) f(t(1-x)) e^{it(2x log x + 2(1-x) log(1-x))} dx
// ---------------------------------------------------------------------------

struct RoesslerOptions {
  int panels = 16;
  int order = 16;
  double grading = 2.0;
  double tol = 1e-11;  // absolute, per knot integral
};

/// 2x log x + 2(1-x) log(1-x), the centering phase of the recursion.
inline double centering_phase(double x) {
  const double y = 1.0 - x;
  const double a = x > 0 ? x * std::log(x) : 0.0;
  const double b = y > 0 ? y * std::log1p(-x) : 0.0;
  return 2.0 * a + 2.0 * b;
}

namespace detail {

/// Nodes of a fixed mesh under the order-n and order-2n rules with the
/// centering phase precomputed.
struct RoesslerTable {
  struct Panel {
    double a, b;
    std::vector<double> x, w, c;      // order n
    std::vector<double> x2, w2, c2;   // order 2n
  };
  std::vector<Panel> panels;
  const QuadRule* rule;
  const QuadRule* rule2;

  RoesslerTable(const GradedMesh& mesh, int order)
      : rule(&gauss_legendre(order)), rule2(&gauss_legendre(2 * order)) {
    const auto& bp = mesh.breakpoints();
    for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
      Panel pa{bp[p], bp[p + 1], {}, {}, {}, {}, {}, {}};
      auto fill = [&](const QuadRule& r, std::vector<double>& x, std::vector<double>& w, std::vector<double>& c) {
        const double half = 0.5 * (pa.b - pa.a), mid = 0.5 * (pa.a + pa.b);
        for (int k = 0; k < r.order; ++k) {
          x.push_back(mid + half * r.nodes[k]);
          w.push_back(half * r.weights[k]);
          c.push_back(centering_phase(x.back()));
        }
      };
      fill(*rule, pa.x, pa.w, pa.c);
      fill(*rule2, pa.x2, pa.w2, pa.c2);
      panels.push_back(std::move(pa));
    }
  }
};

inline QuadResult roessler_integral(const ComplexSpline& f, double t, const RoesslerTable& table, double tol) {
  auto integrand = [&](double x) {
    return f(t * x) * f(t * (1.0 - x)) * std::polar(1.0, t * centering_phase(x));
  };
  auto sum = [&](const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& c) {
    cplx acc{};
    for (std::size_t k = 0; k < x.size(); ++k)
      acc += w[k] * (f(t * x[k]) * f(t * (1.0 - x[k])) * std::polar(1.0, t * c[k]));
    return acc;
  };
  std::vector<PanelState> panels;
  panels.reserve(table.panels.size());
  for (const auto& p : table.panels) {
    const cplx coarse = sum(p.x, p.w, p.c);
    const cplx fine = sum(p.x2, p.w2, p.c2);
    panels.push_back({p.a, p.b, coarse, fine, std::abs(coarse - fine), 0});
  }
  const QuadResult total = refine_panels(integrand, std::move(panels), *table.rule, *table.rule2, tol);
  if (!is_finite(total.value)) fail(ErrorKind::NonFinite, "Rösler integral not finite at t = " + std::to_string(t));
  return {std::polar(1.0, t) * total.value, total.err};
}

}  // namespace detail

/// One application of the Rösler map on every knot.
inline GridCharFn roessler_step(const GridCharFn& current, const RoesslerOptions& opt = {}) {
  const detail::RoesslerTable table(GradedMesh::graded(0.0, 1.0, opt.panels, opt.grading, GradeToward::Both),
                                    opt.order);
  const std::size_t n = current.size();
  std::vector<cplx> next(n);
  parallel_for(n, [&](std::size_t j) {
    if (j == 0) {
      next[0] = 1.0;
      return;
    }
    cplx g = detail::roessler_integral(current.spline(), current.knot_t(j), table, opt.tol).value;
    const double mod = std::abs(g);
    if (mod > 1.0 + GridCharFn::kModulusSlack)
      fail(ErrorKind::Overshoot, "|g(t)| = " + std::to_string(mod) + " at t = " + std::to_string(current.knot_t(j)));
    if (mod > 1.0) g /= mod;
    next[j] = g;
  });
  next[0] = 1.0;
  return GridCharFn(current.step(), std::move(next),
                    FixpointTrace{current.iteration_count() + 1, 0.0, current.trace().sup_differences});
}

/// max over samples of |f(t) - e^{it}∫...dx| with the integral at doubled order.
inline double equation_residual(const GridCharFn& f, std::span<const double> samples, const RoesslerOptions& opt = {}) {
  const detail::RoesslerTable table(GradedMesh::graded(0.0, 1.0, opt.panels, opt.grading, GradeToward::Both),
                                    2 * opt.order);
  std::vector<double> res(samples.size(), 0.0);
  parallel_for(samples.size(), [&](std::size_t i) {
    const double t = samples[i];
    require(t >= 0 && t <= f.t_max() * (1 + 1e-12), ErrorKind::OutOfRange,
            "residual sample t = " + std::to_string(t) + " outside [0, t_max]");
    if (t == 0.0) return;
    const QuadResult r = detail::roessler_integral(f.spline(), t, table, opt.tol);
    res[i] = std::abs(f(t) - r.value);
  });
  return res.empty() ? 0.0 : *std::max_element(res.begin(), res.end());
}

struct FixpointOptions {
  double t_max = 200.0;
  double h = 0.02;
  int max_iter = 60;
  double tol = 1e-8;
  RoesslerOptions step{};
  std::function<void(int, double)> on_iteration;  // (k, d_k)
};

/// Knots used to record the residual of a converged grid: a stride through the
/// whole grid plus the fixed checkpoints 1, 5, 10, 20, 50 where they fit.
inline std::vector<double> residual_probe_points(const GridCharFn& f, std::size_t target = 400) {
  std::vector<double> pts;
  const std::size_t stride = std::max<std::size_t>(1, (f.size() - 1) / target);
  for (std::size_t j = stride; j < f.size(); j += stride) pts.push_back(f.knot_t(j));
  for (double t : {1.0, 5.0, 10.0, 20.0, 50.0})
    if (t <= f.t_max()) pts.push_back(t);
  std::sort(pts.begin(), pts.end());
  return pts;
}

/// Iterates the Rösler map from f₀ ≡ 1 until sup_j |f_{k+1} - f_k| < tol.
inline GridCharFn iterate_to_fixpoint(const FixpointOptions& opt = {}) {
  require(opt.t_max >= 10.0, ErrorKind::InvalidArgument, "t_max must be >= 10");
  require(opt.h > 0 && opt.h <= 0.05, ErrorKind::InvalidArgument, "h must lie in (0, 0.05]");
  require(opt.tol > 0, ErrorKind::InvalidArgument, "tol must be positive");
  require(opt.max_iter >= 1, ErrorKind::InvalidArgument, "max_iter must be >= 1");
  const auto intervals = static_cast<std::size_t>(std::llround(opt.t_max / opt.h));
  GridCharFn current(opt.h, std::vector<cplx>(intervals + 1, cplx(1.0, 0.0)));
  std::vector<double> diffs;
  double d = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= opt.max_iter; ++k) {
    GridCharFn next = roessler_step(current, opt.step);
    d = 0.0;
    for (std::size_t j = 0; j < next.size(); ++j) d = std::max(d, std::abs(next.knot(j) - current.knot(j)));
    diffs.push_back(d);
    if (opt.on_iteration) opt.on_iteration(k, d);
    current = std::move(next);
    if (d < opt.tol) {
      const auto probes = residual_probe_points(current);
      const double residual = equation_residual(current, probes, opt.step);
      return GridCharFn(current.step(), std::vector<cplx>(current.values().begin(), current.values().end()),
                        FixpointTrace{k, residual, std::move(diffs)});
    }
  }
  fail(ErrorKind::NoConvergence, "sup-difference " + std::to_string(d) + " >= tol " + std::to_string(opt.tol) +
                                     " after " + std::to_string(opt.max_iter) + " iterations");
}

// ---------------------------------------------------------------------------
// Super-polynomial envelope |f(t)| <= inf_p 2^{p²+6p}/|t|^p <= |t|³ exp(-log²|t| / (4 log 2))
// ---------------------------------------------------------------------------

inline double fill_janson_envelope(double t) {
  const double at = std::abs(t);
  const double l = std::log(at);
  return at * at * at * std::exp(-l * l / (4.0 * std::numbers::ln2));
}

/// inf over p > 0 of 2^{p²+6p} / |t|^p, by minimising the exponent in p.
inline double fill_janson_infimum(double t) {
  const double l = std::log(std::abs(t));
  const double a = std::numbers::ln2;
  if (l <= 6.0 * a) return 1.0;  // minimiser p* = (l - 6a) / 2a is not positive; inf approached as p -> 0
  const double e = l - 6.0 * a;
  return std::exp(-e * e / (4.0 * a));
}

struct EnvelopeReport {
  std::vector<double> t;
  std::vector<double> envelope;
  std::vector<double> measured;
  double max_ratio = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline EnvelopeReport envelope_certify(const GridCharFn& f, double t_lo, double tolerance = 0.05) {
  require(t_lo >= 1.0, ErrorKind::InvalidArgument, "envelope certification needs t_lo >= 1");
  EnvelopeReport rep;
  rep.tolerance = tolerance;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double t = f.knot_t(j);
    if (t < t_lo) continue;
    const double env = fill_janson_envelope(t);
    const double m = std::abs(f.knot(j));
    rep.t.push_back(t);
    rep.envelope.push_back(env);
    rep.measured.push_back(m);
    rep.max_ratio = std::max(rep.max_ratio, m / env);
  }
  rep.pass = rep.max_ratio <= 1.0 + tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Exponential decay |f(t)| ~ c·e^{-ηt}
// ---------------------------------------------------------------------------

struct DecayFit {
  double eta_hat = 0.0;
  double log_c_hat = 0.0;
  double t_lo = 0.0;
  double t_hi = 0.0;
  double rms_residual = 0.0;
  std::size_t knots_used = 0;
};

/// Least-squares line through log|f(t_j)| on the window; knots with |f| <= floor are dropped.
inline DecayFit fit_decay(const GridCharFn& f, double t_lo, double t_hi, double floor = 1e-14,
                          std::size_t min_knots = 50) {
  require(t_lo >= 0 && t_lo < t_hi, ErrorKind::InvalidArgument, "fit window must satisfy 0 <= t_lo < t_hi");
  require(t_hi <= f.t_max() * (1 + 1e-12), ErrorKind::InvalidArgument, "fit window exceeds t_max");
  std::vector<double> xs, ys;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double t = f.knot_t(j);
    if (t < t_lo || t > t_hi) continue;
    const double m = std::abs(f.knot(j));
    if (!(m > floor)) continue;
    xs.push_back(t);
    ys.push_back(std::log(m));
  }
  require(xs.size() >= min_knots, ErrorKind::WindowTooSmall,
          "decay window holds " + std::to_string(xs.size()) + " usable knots, need " + std::to_string(min_knots));
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  if (!(slope < 0)) fail(ErrorKind::NoDecay, "fitted log-modulus slope " + std::to_string(slope) + " is not negative");
  double ss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (intercept + slope * xs[i]);
    ss += r * r;
  }
  return DecayFit{-slope, intercept, t_lo, t_hi, std::sqrt(ss / n), xs.size()};
}

// ---------------------------------------------------------------------------
// CSV exchange: header "t,re_f,im_f", 17 significant digits.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_charfn_csv(std::ostream& out, const GridCharFn& f) {
  out << "t,re_f,im_f\n";
  for (std::size_t j = 0; j < f.size(); ++j) {
    const cplx v = f.knot(j);
    out << format_double(f.knot_t(j)) << ',' << format_double(v.real()) << ',' << format_double(v.imag()) << '\n';
  }
}

namespace detail {

inline double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorKind::Parse, "bad number '" + std::string(s) + "' on line " + std::to_string(line));
  return v;
}

}  // namespace detail

inline GridCharFn read_charfn_csv(std::istream& in, FixpointTrace trace = {}) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, "empty charfn CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,re_f,im_f") fail(ErrorKind::Parse, "charfn CSV header must be 't,re_f,im_f'");
  std::vector<double> ts;
  std::vector<cplx> vs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      fail(ErrorKind::Parse, "expected 3 columns on line " + std::to_string(lineno));
    const std::string_view sv(line);
    ts.push_back(detail::parse_double(sv.substr(0, c1), lineno));
    vs.emplace_back(detail::parse_double(sv.substr(c1 + 1, c2 - c1 - 1), lineno),
                    detail::parse_double(sv.substr(c2 + 1), lineno));
  }
  if (ts.size() < 5) fail(ErrorKind::Parse, "charfn CSV needs at least 5 rows");
  if (ts[0] != 0.0) fail(ErrorKind::Parse, "charfn CSV must start at t = 0");
  const double h = ts[1];
  for (std::size_t j = 0; j < ts.size(); ++j)
    if (std::abs(ts[j] - h * double(j)) > 1e-9 * std::max(1.0, ts[j]))
      fail(ErrorKind::Parse, "charfn CSV grid is not uniform at row " + std::to_string(j + 1));
  try {
    return GridCharFn(h, std::move(vs), std::move(trace));
  } catch (const Error& e) {
    fail(ErrorKind::Parse, std::string("charfn CSV violates grid invariants: ") + e.what());
  }
}

}  // namespace qsdist
