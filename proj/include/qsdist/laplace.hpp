#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qsdist/charfn.hpp"
#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"
#include "qsdist/quadrature.hpp"

namespace qsdist {

/// Error budget of one transform moment. `numerical` collects everything that
/// comes from evaluating the integral of the stored grid; `grid` estimates the
/// effect of the grid's own deviation from the exact fixed point.
struct MomentError {
  double quadrature = 0;
  double rounding = 0;
  double cutoff = 0;
  double tail = 0;
  double interpolation = 0;
  double grid = 0;
  double numerical() const { return quadrature + rounding + cutoff + tail + interpolation; }
  double total() const { return numerical() + grid; }
};

struct Moments {
  std::vector<cplx> value;
  std::vector<MomentError> err;
  int rule_order = 0;
  std::size_t intervals_used = 0;
};

/// Tail model |f(t)| <= exp(log_c - eta·t) beyond t_max.
struct TailModel {
  double eta = 0;
  double log_c = 0;
};

/// Precomputed samples of v(t) = f(t)·w(t) on Gauss–Legendre nodes inside every
/// knot interval of the grid, w(t) = e^{2it log t} (transform of g) or 1.
/// evaluate(z, n) returns ∫₀^{t_max} (-t)^k v(t) e^{-zt} dt for k = 0..n, or
/// the same divided by k! when scaled.
class TransformTable {
 public:
  static constexpr int kOrders[] = {8, 16, 32, 64};
  static constexpr int kFirstIntervalLevels = 12;

  TransformTable(const GridCharFn& f, bool log_phase, TailModel tail, double grid_delta)
      : f_(f), log_phase_(log_phase), tail_(tail), grid_delta_(grid_delta) {
    const std::size_t n = f_.size();
    const double h = f_.step();
    bound_.resize(n - 1);
    for (std::size_t j = 0; j + 1 < n; ++j)
      bound_[j] = std::max(std::abs(f_.knot(j)), std::abs(f_.knot(j + 1))) + f_.interp_error(j);
    lgamma_.resize(kMaxOrder + 2);
    for (int k = 0; k < kMaxOrder + 2; ++k) lgamma_[k] = std::lgamma(double(k) + 1.0);
    t_end_abs_ = std::max(std::abs(f_.knot(n - 1)), std::exp(tail_.log_c - tail_.eta * f_.t_max()));
    (void)h;
  }

  static constexpr int kMaxOrder = 64;

  const GridCharFn& grid() const { return f_; }
  bool log_phase() const { return log_phase_; }
  const TailModel& tail_model() const { return tail_; }
  double grid_delta() const { return grid_delta_; }

  Moments evaluate(cplx z, int n_max, bool scaled, double cut_tol = 1e-17) const {
    require(n_max >= 0 && n_max <= kMaxOrder, ErrorKind::InvalidArgument, "moment order out of range");
    require(is_finite(z), ErrorKind::NonFinite, "transform argument");
    const double h = f_.step();
    const std::size_t intervals = f_.size() - 1;
    const double T = f_.t_max();
    const double sr = z.real();
    const int K = n_max + 1;

    // tail beyond t_max under the decay model
    std::vector<double> tail(K, 0.0);
    {
      const double a = tail_.eta + sr;
      if (!(a > 0))
        fail(ErrorKind::InvalidArgument, "tail model does not converge for Re z = " + std::to_string(sr));
      for (int k = 0; k < K; ++k) {
        // ∫_T^∞ t^k e^{-a(t-T)} dt = Σ_i k!/(k-i)! T^{k-i} / a^{i+1}
        double s = 0;
        for (int i = 0; i <= k; ++i) {
          const double lg = (k - i) * std::log(std::max(T, 1e-300)) - (i + 1) * std::log(a) +
                            (scaled ? -lgamma_[k - i] : lgamma_[k] - lgamma_[k - i]);
          s += std::exp(lg);
        }
        tail[k] = t_end_abs_ * s;
      }
    }

    // cutoff: drop trailing intervals whose bound, summed, stays below cut_tol
    auto log_weight = [&](std::size_t j) {
      const double t1 = h * double(j + 1);
      const double t_exp = sr >= 0 ? h * double(j) : t1;
      double lp = 0;
      if (t1 > 1.0) {
        if (scaled) {
          const int kstar = std::min(n_max, static_cast<int>(t1));
          lp = kstar * std::log(t1) - lgamma_[kstar];
        } else {
          lp = n_max * std::log(t1);
        }
      }
      return lp - sr * t_exp;
    };
    double max_tail = *std::max_element(tail.begin(), tail.end());
    double suffix = max_tail;
    std::size_t J = intervals;
    for (std::size_t j = intervals; j-- > 1;) {
      const double e = bound_[j] * h * std::exp(log_weight(j));
      if (suffix + e > cut_tol) break;
      suffix += e;
      J = j;
    }
    const bool truncated = J < intervals;

    // rule pair from the phase rate |z| + 2 log t + 2 at the cutoff; GL-m error on
    // an interval is about (ωh/2)^{2m}/(2m)!
    const double t_cut = h * double(J);
    const double omega = std::abs(z) + (log_phase_ ? 2.0 * std::log(std::max(t_cut, std::numbers::e)) + 2.0 : 0.0);
    const double wh = omega * h;
    const int m = wh <= 1.2 ? 8 : wh <= 4.0 ? 16 : 32;
    const Rule& lo = rule(m);
    const Rule& hi = rule(2 * m);

    Moments out;
    out.rule_order = m;
    out.intervals_used = J;
    out.value.assign(K, cplx(0));
    out.err.assign(K, MomentError{});
    std::vector<cplx> acc_lo(K), acc_hi(K);
    std::vector<double> abs_hi(K, 0.0);

    double inv[kMaxOrder + 1];
    for (int k = 0; k <= kMaxOrder; ++k) inv[k] = scaled ? 1.0 / double(k + 1) : 1.0;
    auto accumulate = [&](std::vector<cplx>& acc, std::vector<double>* absacc, double t, cplx u) {
      double p = 1.0;
      cplx* a = acc.data();
      if (absacc) {
        const double au = std::sqrt(std::norm(u));
        double* b = absacc->data();
        for (int k = 0; k < K; ++k) {
          a[k] += u * p;
          b[k] += au * std::abs(p);
          p *= -t * inv[k];
        }
      } else {
        for (int k = 0; k < K; ++k) {
          a[k] += u * p;
          p *= -t * inv[k];
        }
      }
    };

    // interval 0 on its geometric sub-panels, direct exponentials
    for (std::size_t q = 0; q < lo.first_t.size(); ++q) {
      const double t = lo.first_t[q];
      accumulate(acc_lo, nullptr, t, lo.first_wv[q] * std::exp(-z * t));
    }
    for (std::size_t q = 0; q < hi.first_t.size(); ++q) {
      const double t = hi.first_t[q];
      accumulate(acc_hi, &abs_hi, t, hi.first_wv[q] * std::exp(-z * t));
    }

    // regular intervals with a running exponential e^{-z t_j}
    std::vector<cplx> fac_lo(lo.order), fac_hi(hi.order);
    for (int k = 0; k < lo.order; ++k) fac_lo[k] = std::exp(-z * (h * lo.xi[k]));
    for (int k = 0; k < hi.order; ++k) fac_hi[k] = std::exp(-z * (h * hi.xi[k]));
    const cplx step_exp = std::exp(-z * h);
    cplx run = std::exp(-z * h);
    for (std::size_t j = 1; j < J; ++j) {
      if (j % 128 == 0) run = std::exp(-z * (h * double(j)));
      const double tj = h * double(j);
      const cplx* vlo = &lo.wv[(j - 1) * lo.order];
      for (int k = 0; k < lo.order; ++k) accumulate(acc_lo, nullptr, tj + h * lo.xi[k], vlo[k] * (run * fac_lo[k]));
      const cplx* vhi = &hi.wv[(j - 1) * hi.order];
      for (int k = 0; k < hi.order; ++k)
        accumulate(acc_hi, &abs_hi, tj + h * hi.xi[k], vhi[k] * (run * fac_hi[k]));
      run *= step_exp;
    }

    // interpolation and grid-error integrals, bounded per interval
    std::vector<double> interp(K, 0.0), grid(K, 0.0);
    for (std::size_t j = 0; j < J; ++j) {
      const double t1 = h * double(j + 1);
      const double t_exp = sr >= 0 ? h * double(j) : t1;
      const double base = h * std::exp(-sr * t_exp);
      const double ie = f_.interp_error(j) * base;
      const double ge = std::min(grid_delta_, bound_[j]) * base;
      double p = 1.0;
      for (int k = 0; k < K; ++k) {
        const double pk = std::max(p, 0.0);
        interp[k] += ie * pk;
        grid[k] += ge * pk;
        p *= scaled ? t1 / double(k + 1) : t1;
      }
    }

    constexpr double eps = std::numeric_limits<double>::epsilon();
    for (int k = 0; k < K; ++k) {
      out.value[k] = acc_hi[k];
      auto& e = out.err[k];
      e.quadrature = std::abs(acc_hi[k] - acc_lo[k]);
      e.rounding = 8.0 * eps * abs_hi[k];
      e.cutoff = truncated ? suffix : 0.0;
      e.tail = truncated ? 0.0 : tail[k];
      e.interpolation = interp[k];
      e.grid = grid[k];
      if (!is_finite(out.value[k])) fail(ErrorKind::NonFinite, "transform moment not finite");
    }
    return out;
  }

  /// ∫|ε(t)| e^{-σt} dt for the perturbations that are themselves a change of f:
  /// spline interpolation error (grid = false) or grid error + truncated tail (grid = true).
  /// Valid for any σ > -η of the tail model; independent of Im s.
  double consistent_bound(double sigma, bool grid) const {
    require(tail_.eta + sigma > 0, ErrorKind::InvalidArgument, "perturbation bound diverges for this sigma");
    const double h = f_.step();
    double acc = 0;
    for (std::size_t j = 0; j < bound_.size(); ++j) {
      const double t_exp = sigma >= 0 ? h * double(j) : h * double(j + 1);
      const double a = grid ? std::min(grid_delta_, bound_[j]) : f_.interp_error(j);
      acc += a * h * std::exp(-sigma * t_exp);
    }
    if (grid) acc += t_end_abs_ * std::exp(-sigma * f_.t_max()) / (tail_.eta + sigma);
    return acc;
  }

  /// ∫ t·|ρ(t)| e^{-σt} dt: the defect of the shift identity over one unit step
  /// caused by the grid residual ρ. rho holds |ρ| at t = k·dt; between samples
  /// twice the larger neighbour is used.
  double residual_forcing(double sigma, std::span<const double> rho, double dt) const {
    require(tail_.eta + sigma > 0, ErrorKind::InvalidArgument, "forcing bound diverges for this sigma");
    require(!rho.empty() && dt > 0, ErrorKind::InvalidArgument, "empty residual profile");
    const double h = f_.step();
    double acc = 0;
    for (std::size_t j = 0; j < bound_.size(); ++j) {
      const double t0 = h * double(j), t1 = h * double(j + 1);
      const double t_exp = sigma >= 0 ? t0 : t1;
      const auto a = std::min<std::size_t>(static_cast<std::size_t>(t0 / dt), rho.size() - 1);
      const auto b = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(t1 / dt)), rho.size() - 1);
      double r = 0;
      for (std::size_t q = a; q <= b; ++q) r = std::max(r, rho[q]);
      acc += std::min(2 * r, 2 * bound_[j]) * t1 * h * std::exp(-sigma * t_exp);
    }
    return acc;
  }

 private:
  struct Rule {
    int order = 0;
    std::vector<double> xi;     // node positions in (0, 1) within an interval
    std::vector<cplx> wv;       // weight·h·v at regular intervals j >= 1, flattened
    std::vector<double> first_t;
    std::vector<cplx> first_wv;
  };

  cplx weight(double t) const { return log_phase_ && t > 0 ? std::polar(1.0, 2.0 * t * std::log(t)) : cplx(1.0); }

  const Rule& rule(int order) const {
    int slot = 0;
    while (kOrders[slot] != order) ++slot;
    std::call_once(once_[slot], [&] { rules_[slot] = build(order); });
    return rules_[slot];
  }

  Rule build(int order) const {
    const QuadRule& gl = gauss_legendre(order);
    const double h = f_.step();
    Rule r;
    r.order = order;
    for (int k = 0; k < order; ++k) r.xi.push_back(0.5 * (1.0 + gl.nodes[k]));
    const std::size_t intervals = f_.size() - 1;
    r.wv.resize((intervals - 1) * order);
    for (std::size_t j = 1; j < intervals; ++j) {
      const double tj = h * double(j);
      for (int k = 0; k < order; ++k) {
        const double t = tj + h * r.xi[k];
        r.wv[(j - 1) * order + k] = (0.5 * h * gl.weights[k]) * f_(t) * weight(t);
      }
    }
    // [0, h] split at h·2^{-L}, ..., h/2
    std::vector<double> bp{0.0};
    for (int l = kFirstIntervalLevels; l >= 1; --l) bp.push_back(h * std::ldexp(1.0, -l));
    bp.push_back(h);
    for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
      const double a = bp[p], b = bp[p + 1];
      for (int k = 0; k < order; ++k) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k];
        r.first_t.push_back(t);
        r.first_wv.push_back((0.5 * (b - a) * gl.weights[k]) * f_(t) * weight(t));
      }
    }
    return r;
  }

  GridCharFn f_;
  bool log_phase_;
  TailModel tail_;
  double grid_delta_;
  std::vector<double> bound_;
  std::vector<double> lgamma_;
  double t_end_abs_ = 0;
  mutable std::array<std::once_flag, 4> once_;
  mutable std::array<Rule, 4> rules_;
};

/// Estimated sup-distance between a grid and the exact fixed point: the last
/// step (or the equation residual) scaled by 1/(1-q) with q the observed
/// contraction ratio.
inline double grid_error_estimate(const GridCharFn& f) {
  const auto& d = f.trace().sup_differences;
  double step = f.residual();
  double q = 0.5;
  if (!d.empty()) {
    step = std::max(step, d.back());
    std::vector<double> ratios;
    for (std::size_t k = d.size() >= 6 ? d.size() - 5 : 1; k < d.size(); ++k)
      if (d[k - 1] > 0) ratios.push_back(d[k] / d[k - 1]);
    if (!ratios.empty()) {
      std::sort(ratios.begin(), ratios.end());
      q = std::clamp(ratios[ratios.size() / 2], 0.0, 0.95);
    }
  }
  return step / (1.0 - q);
}

enum class PsiMethod { DirectQuadrature, Taylor, ShiftIdentity };

inline const char* to_string(PsiMethod m) {
  switch (m) {
    case PsiMethod::DirectQuadrature: return "direct-quadrature";
    case PsiMethod::Taylor: return "taylor";
    case PsiMethod::ShiftIdentity: return "shift-identity";
  }
  return "?";
}

/// ψ⁽ⁿ⁾ at a point. err_est is the full budget; numerical_err omits the grid term.
struct PsiSample {
  ComplexPoint s{0.0, 0.0};
  int order = 0;
  cplx value{};
  double err_est = 0;
  double numerical_err = 0;
  PsiMethod method = PsiMethod::DirectQuadrature;
  int shift_depth = 0;
};

struct LaplaceOptions {
  double sigma_min = 0.05;
  int max_order = 6;
};

/// ψ(s) = ∫₀^∞ f(t) e^{2it log t} e^{-st} dt and its derivatives for Re s >= sigma_min.
class LaplaceEngine {
 public:
  LaplaceEngine(const GridCharFn& f, const DecayFit& fit, LaplaceOptions opt = {})
      : opt_(opt),
        fit_(fit),
        residual_(f.residual()),
        table_(std::make_shared<const TransformTable>(f, true, TailModel{fit.eta_hat, fit.log_c_hat},
                                                      grid_error_estimate(f))) {
    require(opt_.sigma_min > 0, ErrorKind::InvalidArgument, "sigma_min must be positive");
    std::vector<double> ts;
    for (double t = kProfileStep; t <= f.t_max() + 1e-9; t += kProfileStep) ts.push_back(t);
    profile_.push_back(0.0);
    for (double t : ts) profile_.push_back(equation_residual(f, std::span<const double>(&t, 1)));
  }

  static constexpr double kProfileStep = 0.25;
  /// measured |ρ(k·0.25)| of the grid, k = 0, 1, ...
  const std::vector<double>& residual_profile() const { return profile_; }

  const GridCharFn& grid() const { return table_->grid(); }
  const DecayFit& fit() const { return fit_; }
  const TransformTable& table() const { return *table_; }
  double sigma_min() const { return opt_.sigma_min; }
  int max_order() const { return opt_.max_order; }
  /// functional-equation residual recorded with the grid
  double grid_residual() const { return residual_; }

  std::vector<PsiSample> psi_upto(cplx s, int n_max) const {
    require(is_finite(s), ErrorKind::NonFinite, "psi argument");
    if (s.real() < opt_.sigma_min)
      fail(ErrorKind::SigmaTooSmall, "Re s = " + std::to_string(s.real()) + " below sigma_min = " +
                                         std::to_string(opt_.sigma_min) + "; use continuation");
    require(n_max >= 0 && n_max <= opt_.max_order, ErrorKind::InvalidArgument,
            "psi order must lie in [0, " + std::to_string(opt_.max_order) + "]");
    const Moments m = table_->evaluate(s, n_max, false);
    std::vector<PsiSample> out;
    for (int k = 0; k <= n_max; ++k)
      out.push_back(PsiSample{ComplexPoint(s), k, m.value[k], m.err[k].total(), m.err[k].numerical(),
                              PsiMethod::DirectQuadrature, 0});
    return out;
  }

  PsiSample psi(cplx s, int order = 0) const { return psi_upto(s, order).back(); }
  PsiSample psi(const ComplexPoint& s, int order = 0) const { return psi(s.value(), order); }

  /// ψ⁽ᵏ⁾(c)/k! for k = 0..n_max without the sigma_min / order limits (Taylor use).
  Moments taylor_coefficients(cplx c, int n_max) const { return table_->evaluate(c, n_max, true); }

 private:
  LaplaceOptions opt_;
  DecayFit fit_;
  double residual_;
  std::shared_ptr<const TransformTable> table_;
  std::vector<double> profile_;
};

// ---------------------------------------------------------------------------
// Shift-differential equation  -ψ'(s) = ψ²(s - i)
// ---------------------------------------------------------------------------

struct ShiftCheck {
  cplx s{};
  double residual = 0;  // |ψ'(s) + ψ(s-i)²|
  double budget = 0;    // numerical error propagation + R/σ² for the grid residual R
  cplx dpsi{};
  cplx psi_shifted{};
};

inline ShiftCheck shift_residual(const LaplaceEngine& eng, cplx s) {
  const PsiSample d = eng.psi(s, 1);
  const PsiSample p = eng.psi(s - cplx(0, 1), 0);
  ShiftCheck c;
  c.s = s;
  c.dpsi = d.value;
  c.psi_shifted = p.value;
  c.residual = std::abs(d.value + p.value * p.value);
  const double sigma = s.real();
  c.budget = d.numerical_err + 2.0 * std::abs(p.value) * p.numerical_err + p.numerical_err * p.numerical_err +
             eng.grid_residual() / (sigma * sigma);
  return c;
}

/// ψ(s₀) - ψ(s₀-i) + i∫₀¹ψ(s₀-i-iu)²du, every term by direct quadrature (Re s₀ >= sigma_min).
struct OneStepShift {
  double residual = 0;
  double budget = 0;
};

inline OneStepShift one_step_shift_check(const LaplaceEngine& eng, cplx s0) {
  const PsiSample a = eng.psi(s0), b = eng.psi(s0 - cplx(0, 1));
  const QuadRule& r32 = gauss_legendre(32);
  const QuadRule& r16 = gauss_legendre(16);
  auto quad = [&](const QuadRule& r, double* err) {
    cplx acc{};
    for (int k = 0; k < r.order; ++k) {
      const double u = 0.5 * (1.0 + r.nodes[k]);
      const PsiSample p = eng.psi(s0 - cplx(0, 1) - cplx(0, u));
      acc += 0.5 * r.weights[k] * p.value * p.value;
      if (err) *err += 0.5 * r.weights[k] * (2.0 * std::abs(p.value) * p.numerical_err);
    }
    return acc;
  };
  double prop = 0;
  const cplx i32 = quad(r32, &prop);
  const cplx i16 = quad(r16, nullptr);
  OneStepShift r;
  r.residual = std::abs(a.value - b.value + cplx(0, 1) * i32);
  r.budget = a.numerical_err + b.numerical_err + prop + std::abs(i32 - i16) +
             2.0 * eng.grid_residual() / (s0.real() * s0.real());
  return r;
}

}  // namespace qsdist
