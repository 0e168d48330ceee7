#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <ostream>
#include <span>
#include <vector>

#include "json.hpp"
#include "qsdist/charfn.hpp"
#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"
#include "qsdist/finite_diff.hpp"
#include "qsdist/laplace.hpp"
#include "qsdist/parallel.hpp"
#include "qsdist/quicksim.hpp"

namespace qsdist {

struct XGrid {
  double lo = -2.0;
  double hi = 8.0;
  double step = 0.01;
};

/// p(x_j) on a uniform grid with per-point error estimates.
struct DensityGrid {
  std::vector<double> x;
  std::vector<double> p;
  std::vector<double> err;
  double step = 0;
  double truncation_bound = 0;  // e^{-η̂ t_max}/(π η̂)
  double quad_budget = 0;       // max pointwise err
  double eta_used = 0;

  double budget() const { return truncation_bound + quad_budget; }

  double moment(int k) const {
    CompensatedSum s;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double w = (j == 0 || j + 1 == x.size()) ? 0.5 : 1.0;
      s.add(w * std::pow(x[j], k) * p[j] * step);
    }
    return s.value();
  }
  double mass() const { return moment(0); }
  double mean() const { return moment(1); }
  double variance() const {
    const double m = mean() / mass();
    return moment(2) / mass() - m * m;
  }

  /// trapezoid CDF at the knots, starting from 0 at x_0
  std::vector<double> cdf() const {
    std::vector<double> c(x.size(), 0.0);
    for (std::size_t j = 1; j < x.size(); ++j) c[j] = c[j - 1] + 0.5 * (p[j - 1] + p[j]) * step;
    return c;
  }

  /// copy translated by dx (p_shift(x) = p(x - dx))
  DensityGrid shifted(double dx) const {
    DensityGrid d = *this;
    for (double& v : d.x) v += dx;
    return d;
  }
};

inline TransformTable density_table(const GridCharFn& f, const std::optional<DecayFit>& fit) {
  if (!fit) fail(ErrorKind::MissingDecayFit, "density needs a decay fit for its tail bound");
  require(fit->eta_hat > 0, ErrorKind::MissingDecayFit, "decay fit must have eta_hat > 0");
  return TransformTable(f, false, TailModel{fit->eta_hat, fit->log_c_hat}, grid_error_estimate(f));
}

/// p(x) = (1/π) Re ∫₀^{t_max} f(t) e^{-ixt} dt on the grid.
inline DensityGrid invert_density(const GridCharFn& f, const std::optional<DecayFit>& fit, XGrid grid = {}) {
  require(grid.step > 0 && grid.hi > grid.lo, ErrorKind::InvalidArgument, "invalid x grid");
  const TransformTable table = density_table(f, fit);
  DensityGrid d;
  d.step = grid.step;
  d.eta_used = fit->eta_hat;
  const long n = std::lround((grid.hi - grid.lo) / grid.step);
  for (long j = 0; j <= n; ++j) d.x.push_back(grid.lo + double(j) * grid.step);
  d.p.resize(d.x.size());
  d.err.resize(d.x.size());
  parallel_for(d.x.size(), [&](std::size_t j) {
    const Moments m = table.evaluate(cplx(0, d.x[j]), 0, false);
    d.p[j] = m.value[0].real() / std::numbers::pi;
    d.err[j] = m.err[0].total() / std::numbers::pi;
  });
  d.truncation_bound = std::exp(-fit->eta_hat * f.t_max()) / (std::numbers::pi * fit->eta_hat);
  d.quad_budget = *std::max_element(d.err.begin(), d.err.end());
  return d;
}

inline void write_density_csv(std::ostream& out, const DensityGrid& d) {
  out << "x,p,err\n";
  for (std::size_t j = 0; j < d.x.size(); ++j)
    out << format_double(d.x[j]) << ',' << format_double(d.p[j]) << ',' << format_double(d.err[j]) << '\n';
}

inline nlohmann::ordered_json to_json(const DensityGrid& d) {
  nlohmann::ordered_json j;
  j["x_range"] = {d.x.front(), d.x.back()};
  j["step"] = d.step;
  j["points"] = d.x.size();
  j["eta_used"] = d.eta_used;
  j["truncation_bound"] = d.truncation_bound;
  j["quad_budget"] = d.quad_budget;
  j["mass"] = d.mass();
  j["mean"] = d.mean();
  j["variance"] = d.variance();
  j["min_p"] = *std::min_element(d.p.begin(), d.p.end());
  return j;
}

// ---------------------------------------------------------------------------
// analytic extension to |Im s| < η
// ---------------------------------------------------------------------------

struct ComplexDensityValue {
  ComplexPoint s{0.0, 0.0};
  cplx value{};
  double err_est = 0;
};

class ComplexDensity {
 public:
  static constexpr double kStripFactor = 0.8;

  ComplexDensity(const GridCharFn& f, const std::optional<DecayFit>& fit)
      : table_(density_table(f, fit)), eta_(fit->eta_hat) {}

  double eta_hat() const { return eta_; }

  /// (1/2π)∫_{-t_max}^{t_max} f(t) e^{-ist} dt = (1/2π)[I(is) + conj(I(i·conj s))],
  /// I(z) = ∫₀^{t_max} f(t) e^{-zt} dt.
  ComplexDensityValue operator()(const ComplexPoint& s) const {
    if (std::abs(s.im()) > kStripFactor * eta_)
      fail(ErrorKind::StripExceeded, "|Im s| = " + std::to_string(std::abs(s.im())) + " exceeds 0.8·eta_hat = " +
                                         std::to_string(kStripFactor * eta_));
    const cplx z = s.value();
    const Moments a = table_.evaluate(cplx(0, 1) * z, 0, false);
    const Moments b = table_.evaluate(cplx(0, 1) * std::conj(z), 0, false);
    ComplexDensityValue v{s, (a.value[0] + std::conj(b.value[0])) / (2 * std::numbers::pi), 0};
    v.err_est = (a.err[0].total() + b.err[0].total()) / (2 * std::numbers::pi);
    return v;
  }

 private:
  TransformTable table_;
  double eta_;
};

inline ComplexDensityValue density_at_complex(const ComplexPoint& s, const GridCharFn& f,
                                              const std::optional<DecayFit>& fit) {
  return ComplexDensity(f, fit)(s);
}

// ---------------------------------------------------------------------------
// property checks on one inversion
// ---------------------------------------------------------------------------

struct StripCheck {
  ComplexPoint s{0.0, 0.0};
  double gap = 0;     // |p(s̄) - conj p(s)|, or the Cauchy–Riemann defect
  double budget = 0;
};

struct DensityChecks {
  double tolerance = 1e-4;
  double mass_gap = 0;
  double mean_gap = 0;
  double min_p = 0;
  double real_axis_worst = 0;  // |density_at_complex(x) - p(x)| / budget
  std::vector<StripCheck> conjugate;
  std::vector<StripCheck> cauchy_riemann;

  bool mass_ok(double limit) const { return mass_gap <= limit; }
  bool mean_ok(double limit) const { return mean_gap <= limit; }
  bool strip_ok() const {
    for (const auto& c : conjugate)
      if (!(c.gap <= tolerance)) return false;
    for (const auto& c : cauchy_riemann)
      if (!(c.gap <= tolerance)) return false;
    return true;
  }
};

/// Cauchy–Riemann defect |∂_y p - i ∂_x p| at s from two fourth-order stencils.
inline double cauchy_riemann_defect(const ComplexDensity& cd, cplx s, double h = 1e-3) {
  auto g = [&](cplx z) { return cd(ComplexPoint(z)).value; };
  const cplx dx = central_diff(g, s, h), dy = central_diff(g, s, h, cplx(0, 1));
  return std::abs(dy - cplx(0, 1) * dx);
}

/// Mass, mean, real-axis agreement at 20 random knots, and conjugate symmetry
/// plus Cauchy–Riemann at 1 + 0.1i and 10 random points with |Im s| <= 0.8·η̂.
inline DensityChecks check_density(const DensityGrid& d, const ComplexDensity& cd, std::uint64_t seed = 11) {
  DensityChecks c;
  c.mass_gap = std::abs(d.mass() - 1.0);
  c.mean_gap = std::abs(d.mean());
  c.min_p = *std::min_element(d.p.begin(), d.p.end());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> knot(0, d.x.size() - 1);
  for (int k = 0; k < 20; ++k) {
    const std::size_t j = knot(rng);
    const ComplexDensityValue v = cd(ComplexPoint(d.x[j], 0.0));
    const double gap = std::max(std::abs(v.value.real() - d.p[j]), std::abs(v.value.imag()));
    c.real_axis_worst = std::max(c.real_axis_worst, gap / (v.err_est + d.err[j]));
  }
  const double h = 1e-3;
  const double ymax = ComplexDensity::kStripFactor * cd.eta_hat() - 2 * h;
  std::uniform_real_distribution<double> ux(d.x.front(), d.x.back()), uy(-ymax, ymax);
  std::vector<cplx> pts{cplx(1, 0.1)};
  for (int k = 0; k < 10; ++k) {
    const double x = ux(rng);
    pts.emplace_back(x, uy(rng));
  }
  for (cplx s : pts) {
    const ComplexDensityValue a = cd(ComplexPoint(s)), b = cd(ComplexPoint(std::conj(s)));
    c.conjugate.push_back(StripCheck{ComplexPoint(s), std::abs(b.value - std::conj(a.value)), a.err_est + b.err_est});
    c.cauchy_riemann.push_back(StripCheck{ComplexPoint(s), cauchy_riemann_defect(cd, s, h), 0.0});
  }
  return c;
}

inline nlohmann::ordered_json to_json(const DensityChecks& c) {
  nlohmann::ordered_json j;
  j["mass_gap"] = c.mass_gap;
  j["mean_gap"] = c.mean_gap;
  j["min_p"] = c.min_p;
  j["real_axis_worst_ratio"] = c.real_axis_worst;
  j["strip_tolerance"] = c.tolerance;
  auto conj = nlohmann::ordered_json::array(), cr = nlohmann::ordered_json::array();
  for (const auto& v : c.conjugate) conj.push_back({v.s.re(), v.s.im(), v.gap, v.budget});
  for (const auto& v : c.cauchy_riemann) cr.push_back({v.s.re(), v.s.im(), v.gap});
  j["conjugate_symmetry"] = std::move(conj);
  j["cauchy_riemann"] = std::move(cr);
  j["strip_pass"] = c.strip_ok();
  return j;
}

// ---------------------------------------------------------------------------
// against Monte Carlo samples
// ---------------------------------------------------------------------------

struct HistogramBin {
  double lo = 0;
  double hi = 0;
  double empirical = 0;
  double model = 0;
};

struct DivergenceReport {
  double ks_distance = 0;
  double ks_location = 0;
  double mc_noise = 0;       // 1.36/√m
  double finite_n_drift = 0; // log n / n
  double max_bin_gap = 0;
  std::vector<HistogramBin> bins;
  long n = 0;
  long samples = 0;
};

inline DivergenceReport compare_histogram(const DensityGrid& dg, const SimSummary& sim, double bin_width = 0.05,
                                          long min_n = 10000, long min_samples = 100000) {
  if (sim.n < min_n || long(sim.y.size()) < min_samples)
    fail(ErrorKind::InsufficientSamples, "need n >= " + std::to_string(min_n) + " and >= " +
                                             std::to_string(min_samples) + " samples");
  const std::vector<double> c = dg.cdf();
  auto model_cdf = [&](double v) {
    if (v <= dg.x.front()) return 0.0;
    if (v >= dg.x.back()) return c.back();
    const double u = (v - dg.x.front()) / dg.step;
    const auto j = std::min<std::size_t>(static_cast<std::size_t>(u), dg.x.size() - 2);
    const double w = u - double(j);
    return c[j] + (c[j + 1] - c[j]) * w;
  };
  std::vector<double> y = sim.y;
  std::sort(y.begin(), y.end());
  const double m = double(y.size());
  DivergenceReport r;
  r.n = sim.n;
  r.samples = long(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fm = model_cdf(y[i]);
    const double gap = std::max(std::abs(fm - double(i) / m), std::abs(double(i + 1) / m - fm));
    if (gap > r.ks_distance) {
      r.ks_distance = gap;
      r.ks_location = y[i];
    }
  }
  r.mc_noise = 1.36 / std::sqrt(m);
  r.finite_n_drift = std::log(double(sim.n)) / double(sim.n);
  const double lo = dg.x.front(), hi = dg.x.back();
  const long nb = std::lround((hi - lo) / bin_width);
  for (long b = 0; b < nb; ++b) {
    HistogramBin bin{lo + b * bin_width, lo + (b + 1) * bin_width, 0, 0};
    const auto first = std::lower_bound(y.begin(), y.end(), bin.lo);
    const auto last = std::lower_bound(y.begin(), y.end(), bin.hi);
    bin.empirical = double(last - first) / m;
    bin.model = model_cdf(bin.hi) - model_cdf(bin.lo);
    r.max_bin_gap = std::max(r.max_bin_gap, std::abs(bin.empirical - bin.model));
    r.bins.push_back(bin);
  }
  return r;
}

inline nlohmann::ordered_json to_json(const DivergenceReport& r, bool with_bins = true) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["samples"] = r.samples;
  j["ks_distance"] = r.ks_distance;
  j["ks_location"] = r.ks_location;
  j["mc_noise"] = r.mc_noise;
  j["finite_n_drift"] = r.finite_n_drift;
  j["max_bin_gap"] = r.max_bin_gap;
  if (with_bins) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : r.bins) arr.push_back({b.lo, b.hi, b.empirical, b.model});
    j["bins"] = std::move(arr);
  }
  return j;
}

}  // namespace qsdist
