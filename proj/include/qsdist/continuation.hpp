#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qsdist/laplace.hpp"

namespace qsdist {

struct ContinuationOptions {
  double c1 = 1.0;                 // calibrated C(1) = A
  int lattice = 64;                // points per unit of Im s
  int max_shift = 200;
  int max_terms = 60;
  double term_ratio = 1e-12;
  double admission_tol = 1e-3;
  double radius_fraction = 0.9;
  int min_shift = 1;               // K >= 1 on branch (b)
};

namespace detail {
// composite 9-point Newton–Cotes and Boole weights (without the h factor)
inline constexpr double kNC9[9] = {989, 5888, -928, 10496, -4540, 10496, -928, 5888, 989};
inline constexpr double kNC9Scale = 4.0 / 14175.0;
inline constexpr double kBoole[5] = {7, 32, 12, 32, 7};
inline constexpr double kBooleScale = 2.0 / 45.0;
}  // namespace detail

/// Values of ψ beyond the direct-quadrature half-plane. Points are grouped into
/// vertical lines Re s = σ; each line carries a lattice y_k = phase + k/64 and
/// every requested point is evaluated exactly at its lattice coordinate.
/// Lattice values come either from a Taylor series about 1 + i·y_k (inside the
/// safe cone) or from ψ(s) = ψ(s-i) - i∫₀¹ψ(s-i-iu)²du marched upward.
/// Single writer: continue_psi mutates the cache.
class ContinuationCache {
 public:
  ContinuationCache(const LaplaceEngine& engine, ContinuationOptions opt) : eng_(&engine), opt_(opt) {
    require(opt_.c1 > 0, ErrorKind::InvalidArgument, "C(1) must be positive");
    require(opt_.lattice % 8 == 0, ErrorKind::InvalidArgument, "lattice must be a multiple of 8");
  }

  const LaplaceEngine& engine() const { return *eng_; }
  const ContinuationOptions& options() const { return opt_; }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, line] : lines_) n += line.values.size() + line.forced.size();
    return n;
  }
  int max_shift_depth() const { return max_depth_; }
  std::size_t taylor_evaluations() const { return taylor_count_; }

  /// Taylor-safe cone at σ + iy: y <= -C1(1+|σ|) and |1-σ| <= 0.9·|1+iy|/C1.
  bool in_cone(double sigma, double y) const { return y <= -opt_.c1 * (1.0 + std::abs(sigma)); }
  bool radius_ok(double sigma, double y) const {
    return std::abs(1.0 - sigma) <= opt_.radius_fraction * std::abs(cplx(1.0, y)) / opt_.c1;
  }

  PsiSample continue_psi(const ComplexPoint& s, int min_shift) {
    const double sigma = s.re(), y = s.im();
    if (sigma < -5.0 || std::abs(y) > 300.0)
      fail(ErrorKind::OutOfRange, "continuation limited to Re s >= -5, |Im s| <= 300");
    if (sigma >= eng_->sigma_min() && min_shift == 0) return eng_->psi(s.value());
    const double step = 1.0 / opt_.lattice;
    const double phase = y - step * std::floor(y * opt_.lattice);
    Line& line = line_for(sigma, phase);
    const long k = std::lround((y - line.phase) * opt_.lattice);
    if (auto it = line.values.find(k); it != line.values.end() && it->second.sample.shift_depth >= min_shift)
      return relabel(it->second.sample, s);
    // highest lattice index in the cone that also meets the radius condition
    long safe_top = std::lround(std::floor((-opt_.c1 * (1.0 + std::abs(sigma)) - line.phase) * opt_.lattice));
    while (!radius_ok(sigma, y_of(line, safe_top))) --safe_top;
    if (min_shift == 0 && k <= safe_top) return relabel(taylor(line, k).sample, s);
    const long L = opt_.lattice;
    const long base = std::min(safe_top, k - long(min_shift) * L);
    if ((k - base + L - 1) / L > opt_.max_shift)
      fail(ErrorKind::RadiusExceeded, "no Taylor base within " + std::to_string(opt_.max_shift) + " shifts");
    // cone points hold Taylor values only; marched values live above safe_top
    for (long j = base - 2 * L + 1; j <= base; ++j) taylor(line, j);
    for (long j = base + 1; j <= k - L; ++j) {
      if (j <= safe_top)
        taylor(line, j);
      else if (!line.values.count(j))
        admit(line.values, j, march(line, j, safe_top));
    }
    auto& store = k <= safe_top ? line.forced : line.values;
    if (auto it = store.find(k); it == store.end()) admit(store, k, march(line, k, std::min(base, safe_top)));
    return relabel(store.at(k).sample, s);
  }

 private:
  // Error of a lattice value. Perturbations that are a change of f (interpolation,
  // grid error, truncated tail) are bounded on the whole line directly. The rest
  // (quadrature, rounding, Taylor truncation) is pushed through the linearised
  // identity δ(s) = δ(s-i) - 2i∫ψδ for a coherent and an alternating seed; each
  // step adds its rule difference and the residual forcing.
  struct Node {
    PsiSample sample;
    cplx lin[2];
    double quad = 0;
  };
  struct Line {
    double sigma;
    double phase;
    double interp = 0;   // consistent perturbation bounds on this line
    double grid = 0;
    double forcing = 0;
    std::map<long, Node> values;
    std::map<long, Node> forced;  // shifted values at points that also hold a Taylor value
  };

  static double y_of(const Line& line, long k, int lattice) { return line.phase + double(k) / lattice; }
  double y_of(const Line& line, long k) const { return y_of(line, k, opt_.lattice); }

  static PsiSample relabel(PsiSample p, const ComplexPoint& s) {
    p.s = s;
    return p;
  }

  Line& line_for(double sigma, double phase) {
    const auto key = std::make_pair(sigma, std::llround(phase * 0x1p40));
    auto it = lines_.find(key);
    if (it == lines_.end()) {
      const TransformTable& tab = eng_->table();
      Line line{sigma, std::ldexp(double(key.second), -40), tab.consistent_bound(sigma, false),
                tab.consistent_bound(sigma, true), tab.residual_forcing(sigma, eng_->residual_profile(), LaplaceEngine::kProfileStep), {}, {}};
      it = lines_.emplace(key, std::move(line)).first;
    }
    return it->second;
  }

  void admit(std::map<long, Node>& store, long k, const Node& n) {
    const PsiSample& p = n.sample;
    if (!(p.err_est <= opt_.admission_tol) || !std::isfinite(p.err_est))
      fail(ErrorKind::ToleranceNotMet, "continued value at (" + std::to_string(p.s.re()) + ", " +
                                           std::to_string(p.s.im()) + ") has err_est " + std::to_string(p.err_est));
    max_depth_ = std::max(max_depth_, p.shift_depth);
    store.emplace(k, n);
  }

  const Node& taylor(Line& line, long k) {
    if (auto it = line.values.find(k); it != line.values.end()) return it->second;
    const double y = y_of(line, k);
    const double d = line.sigma - 1.0;
    const cplx center(1.0, y);
    cplx sum = 0;
    double num = 0, trunc = 0;
    bool done = false;
    for (int n : {16, 32, opt_.max_terms}) {
      const Moments m = eng_->taylor_coefficients(center, std::min(n, opt_.max_terms));
      ++taylor_count_;
      sum = 0;
      num = 0;
      double p = 1, prev = 0;
      for (int j = 0; j <= std::min(n, opt_.max_terms); ++j) {
        const cplx term = m.value[j] * p;
        sum += term;
        num += (m.err[j].quadrature + m.err[j].rounding + m.err[j].cutoff) * std::abs(p);
        const double a = std::abs(term);
        if (j >= 2 && a <= opt_.term_ratio * std::abs(sum)) {
          const double q = prev > 0 ? a / prev : 1.0;
          trunc = q < 1 ? a * q / (1 - q) : a;
          done = true;
          break;
        }
        prev = a;
        p *= d;
      }
      if (done || n >= opt_.max_terms) {
        if (!done) trunc = prev;
        break;
      }
    }
    constexpr double eps = std::numeric_limits<double>::epsilon();
    PsiSample s{ComplexPoint(line.sigma, y), 0, sum, 0, 0, PsiMethod::Taylor, 0};
    const double own = num + trunc + 16 * eps * std::abs(sum);
    s.numerical_err = own + line.interp;
    s.err_est = s.numerical_err + line.grid;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    admit(line.values, k, Node{s, {own, sign * own}, 0.0});
    return line.values.at(k);
  }

  Node march(const Line& line, long k, long base) const {
    const long L = opt_.lattice;
    const double h = 1.0 / L;
    cplx i9 = 0, i5 = 0;
    cplx dl[2] = {};
    auto at = [&](long j) -> const Node& { return line.values.at(j); };
    for (long b = 0; b < L / 8; ++b)
      for (int q = 0; q < 9; ++q) {
        const Node& v = at(k - 2 * L + 8 * b + q);
        const double w = detail::kNC9Scale * h * detail::kNC9[q];
        const cplx psi = v.sample.value;
        i9 += w * psi * psi;
        for (int r = 0; r < 2; ++r) dl[r] += w * 2.0 * psi * v.lin[r];
      }
    for (long b = 0; b < L / 4; ++b)
      for (int q = 0; q < 5; ++q) {
        const cplx psi = at(k - 2 * L + 4 * b + q).sample.value;
        i5 += detail::kBooleScale * h * detail::kBoole[q] * psi * psi;
      }
    const Node& below = at(k - L);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    Node n;
    n.sample = PsiSample{ComplexPoint(line.sigma, y_of(line, k)), 0, below.sample.value - cplx(0, 1) * i9, 0, 0,
                         PsiMethod::ShiftIdentity, int((k - base + L - 1) / L)};
    n.quad = below.quad + std::abs(i9 - i5) + 64 * eps * (std::abs(below.sample.value) + std::abs(i9)) +
             line.forcing;
    for (int r = 0; r < 2; ++r) n.lin[r] = below.lin[r] - cplx(0, 1) * dl[r];
    n.sample.numerical_err = std::max(std::abs(n.lin[0]), std::abs(n.lin[1])) + n.quad + line.interp;
    n.sample.err_est = n.sample.numerical_err + line.grid;
    return n;
  }

  const LaplaceEngine* eng_;
  ContinuationOptions opt_;
  std::map<std::pair<double, long long>, Line> lines_;
  int max_depth_ = 0;
  std::size_t taylor_count_ = 0;
};

/// (a) direct quadrature for Re s >= σ_min, (b) Taylor + shift identity otherwise.
inline PsiSample continue_psi(const ComplexPoint& s, ContinuationCache& cache) {
  return cache.continue_psi(s, s.re() >= cache.engine().sigma_min() ? 0 : cache.options().min_shift);
}

/// Branch (b) regardless of Re s (for consistency checks on the overlap strip).
inline PsiSample continue_psi_forced(const ComplexPoint& s, ContinuationCache& cache, int min_shift = 1) {
  return cache.continue_psi(s, std::max(1, min_shift));
}

// ---------------------------------------------------------------------------
// f recovered from ψ² on the line Re s = -η
// ---------------------------------------------------------------------------

struct ContourOptions {
  double tolerance = 4e-3;   // Y = ceil(2/(π·tolerance))
  double max_y = 1e4;
  double m_const = 0;        // |s·ψ(s)| <= M on the line; 0 → measured on the lattice
  std::optional<double> eps_hat;
};

struct ContourResult {
  double t = 0;
  double eta = 0;
  double y_max = 0;
  cplx value{};        // recovered f(t)
  double quadrature = 0;
  double propagated = 0;
  double tail = 0;
  double m_const = 0;
  double c_apriori = 0;  // |f(t)| <= c_apriori·e^{-ηt}/t
  double budget() const { return quadrature + propagated + tail; }
  double c_const() const { return (std::abs(value) + budget()) * std::exp(eta * t); }
};

class ContourIntegrator {
 public:
  ContourIntegrator(ContinuationCache& cache, double eta, ContourOptions opt = {}) : opt_(opt), eta_(eta) {
    if (!opt_.eps_hat || !(*opt_.eps_hat > 0))
      fail(ErrorKind::EpsilonUnavailable, "contour needs a certified eps_hat > 0");
    require(eta > 0 && eta <= *opt_.eps_hat / 4 * (1 + 1e-12), ErrorKind::InvalidArgument,
            "contour requires 0 < eta <= eps_hat/4");
    require(opt_.tolerance > 0, ErrorKind::InvalidArgument, "contour tolerance must be positive");
    y_max_ = std::ceil(2.0 / (std::numbers::pi * opt_.tolerance));
    if (y_max_ > opt_.max_y)
      fail(ErrorKind::TailBudgetExceeded, "contour needs Y = " + std::to_string(y_max_) + " > " +
                                            std::to_string(opt_.max_y));
    const int L = cache.options().lattice;
    const long n = std::lround(2 * y_max_ * L);
    // ψ(s - i) for s = -η + iy, y = -Y + j/L, in increasing Im order
    samples_.reserve(n + 1);
    double m = 0;
    for (long j = 0; j <= n; ++j) {
      const double y = -y_max_ + double(j) / L;
      PsiSample p = continue_psi(ComplexPoint(-eta, y - 1.0), cache);
      samples_.push_back(p);
      m = std::max(m, std::abs(cplx(-eta, y - 1.0) * p.value));
    }
    m_ = opt_.m_const > 0 ? opt_.m_const : m;
    // (1/2π)∫|ψ(s-i)|²dy with |ψ| <= M/|y| beyond Y
    const double h = 2 * y_max_ / double(n);
    double acc = 0;
    for (long b = 0; b < n / 8; ++b)
      for (int q = 0; q < 9; ++q) {
        const PsiSample& p = samples_[8 * b + q];
        acc += std::abs(detail::kNC9Scale * h * detail::kNC9[q]) * std::pow(std::abs(p.value) + p.err_est, 2);
      }
    c_apriori_ = (acc + 2 * m_ * m_ / (y_max_ - 1)) / (2 * std::numbers::pi);
  }

  double y_max() const { return y_max_; }
  double m_const() const { return m_; }
  double c_apriori() const { return c_apriori_; }
  const std::vector<PsiSample>& samples() const { return samples_; }

  ContourResult recover(double t) const {
    require(t >= 1, ErrorKind::InvalidArgument, "contour recovery needs t >= 1");
    const long n = long(samples_.size()) - 1;
    const double h = 2 * y_max_ / double(n);
    cplx i9 = 0, i5 = 0;
    double prop = 0;
    auto integrand = [&](long j) {
      const double y = -y_max_ + double(j) * h;
      return samples_[j].value * samples_[j].value * std::polar(1.0, t * y);
    };
    for (long b = 0; b < n / 8; ++b)
      for (int q = 0; q < 9; ++q) {
        const long j = 8 * b + q;
        const double w = detail::kNC9Scale * h * detail::kNC9[q];
        i9 += w * integrand(j);
        prop += std::abs(w) * (2 * std::abs(samples_[j].value) * samples_[j].err_est +
                               samples_[j].err_est * samples_[j].err_est);
      }
    for (long b = 0; b < n / 4; ++b)
      for (int q = 0; q < 5; ++q) i5 += detail::kBooleScale * h * detail::kBoole[q] * integrand(4 * b + q);
    const double scale = std::exp(-eta_ * t) / (2 * std::numbers::pi * t);
    ContourResult r;
    r.t = t;
    r.eta = eta_;
    r.y_max = y_max_;
    r.m_const = m_;
    r.c_apriori = c_apriori_;
    const cplx g = scale * i9;
    r.value = g * std::polar(1.0, -2.0 * t * std::log(t));
    r.quadrature = scale * std::abs(i9 - i5);
    r.propagated = scale * prop;
    r.tail = m_ * m_ * std::exp(-eta_ * t) / (std::numbers::pi * t * (y_max_ - 1));
    return r;
  }

 private:
  ContourOptions opt_;
  double eta_;
  double y_max_ = 0;
  double m_ = 0;
  double c_apriori_ = 0;
  std::vector<PsiSample> samples_;
};

inline ContourResult contour_recover_f(double t, double eta, ContinuationCache& cache, ContourOptions opt = {}) {
  return ContourIntegrator(cache, eta, opt).recover(t);
}

}  // namespace qsdist
