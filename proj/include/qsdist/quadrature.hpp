#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"

namespace qsdist {

/// Gauss–Legendre rule on (-1, 1). Nodes increasing, weights positive.
struct QuadRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order = 0;
};

/// Nodes by Newton iteration on P_n with the usual cosine starting guess.
inline QuadRule make_gauss_legendre(int order) {
  require(order >= 2, ErrorKind::InvalidArgument, "Gauss-Legendre order must be >= 2");
  const int n = order;
  QuadRule rule;
  rule.order = n;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Shared immutable rule of the given order; built once per process.
inline const QuadRule& gauss_legendre(int order) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<const QuadRule>> rules;
  std::lock_guard lock(mutex);
  auto& slot = rules[order];
  if (!slot) slot = std::make_unique<const QuadRule>(make_gauss_legendre(order));
  return *slot;
}

enum class GradeToward { None, Left, Right, Both };

/// Partition of [a, b] into panels; graded panels shrink algebraically
/// (breakpoints a + (b-a)·u^p) toward the chosen endpoints.
class GradedMesh {
 public:
  explicit GradedMesh(std::vector<double> breakpoints, double grading = 1.0)
      : breakpoints_(std::move(breakpoints)), grading_(grading) {
    require(breakpoints_.size() >= 2, ErrorKind::DegenerateGrid, "mesh needs at least one panel");
    require(grading_ >= 1.0, ErrorKind::InvalidArgument, "grading exponent must be >= 1");
    for (std::size_t i = 1; i < breakpoints_.size(); ++i)
      require(breakpoints_[i] > breakpoints_[i - 1], ErrorKind::DegenerateGrid,
              "mesh breakpoints must be strictly increasing");
  }

  static GradedMesh uniform(double a, double b, int panels) {
    require(b > a && panels >= 1, ErrorKind::InvalidArgument, "uniform mesh needs b > a, panels >= 1");
    std::vector<double> bp(panels + 1);
    for (int i = 0; i <= panels; ++i) bp[i] = a + (b - a) * i / panels;
    bp.back() = b;
    return GradedMesh(std::move(bp), 1.0);
  }

  static GradedMesh graded(double a, double b, int panels, double exponent, GradeToward toward) {
    require(b > a && panels >= 1, ErrorKind::InvalidArgument, "graded mesh needs b > a, panels >= 1");
    require(exponent >= 1.0, ErrorKind::InvalidArgument, "grading exponent must be >= 1");
    std::vector<double> bp;
    bp.reserve(panels + 1);
    const double len = b - a;
    switch (toward) {
      case GradeToward::None:
        return uniform(a, b, panels);
      case GradeToward::Left:
        for (int i = 0; i <= panels; ++i) bp.push_back(a + len * std::pow(double(i) / panels, exponent));
        break;
      case GradeToward::Right:
        for (int i = panels; i >= 0; --i) bp.push_back(b - len * std::pow(double(i) / panels, exponent));
        break;
      case GradeToward::Both: {
        require(panels % 2 == 0, ErrorKind::InvalidArgument, "two-sided grading needs an even panel count");
        const int half = panels / 2;
        const double mid = 0.5 * len;
        for (int i = 0; i <= half; ++i) bp.push_back(a + mid * std::pow(double(i) / half, exponent));
        for (int i = half - 1; i >= 0; --i) bp.push_back(b - mid * std::pow(double(i) / half, exponent));
        break;
      }
    }
    bp.front() = a;
    bp.back() = b;
    return GradedMesh(std::move(bp), exponent);
  }

  /// Every panel split at its midpoint.
  GradedMesh halved() const {
    std::vector<double> bp;
    bp.reserve(2 * breakpoints_.size() - 1);
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
      bp.push_back(breakpoints_[i]);
      bp.push_back(0.5 * (breakpoints_[i] + breakpoints_[i + 1]));
    }
    bp.push_back(breakpoints_.back());
    return GradedMesh(std::move(bp), grading_);
  }

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  std::size_t panels() const { return breakpoints_.size() - 1; }
  double a() const { return breakpoints_.front(); }
  double b() const { return breakpoints_.back(); }
  double grading() const { return grading_; }

 private:
  std::vector<double> breakpoints_;
  double grading_;
};

struct QuadResult {
  cplx value{};
  double err = 0.0;
};

namespace detail {

template <class F>
cplx panel_rule(F& f, double a, double b, const QuadRule& rule) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  cplx acc{};
  for (int k = 0; k < rule.order; ++k) {
    const double x = mid + half * rule.nodes[k];
    const cplx v = f(x);
    if (!is_finite(v)) fail(ErrorKind::NonFinite, "integrand not finite at x = " + std::to_string(x));
    acc += rule.weights[k] * v;
  }
  return half * acc;
}

inline constexpr int kMaxHalvings = 8;

struct PanelState {
  double a, b;
  cplx coarse, fine;
  double err;
  int depth;
};

template <class F>
PanelState make_panel(F& f, double a, double b, const QuadRule& rule, const QuadRule& rule2, int depth) {
  const cplx c = panel_rule(f, a, b, rule);
  const cplx q = panel_rule(f, a, b, rule2);
  return {a, b, c, q, std::abs(c - q), depth};
}

/// Global-budget refinement: the panel with the largest |Q_n - Q_2n| is
/// bisected until the summed estimate is within tol. A panel that would need
/// more than kMaxHalvings bisections raises ToleranceNotMet.
template <class F>
QuadResult refine_panels(F& f, std::vector<PanelState> panels, const QuadRule& rule, const QuadRule& rule2,
                         double tol) {
  auto less = [](const PanelState& x, const PanelState& y) { return x.err < y.err; };
  double total_err = 0;
  for (const auto& p : panels) total_err += p.err;
  if (total_err > tol) {
    std::make_heap(panels.begin(), panels.end(), less);
    while (total_err > tol) {
      std::pop_heap(panels.begin(), panels.end(), less);
      const PanelState worst = panels.back();
      panels.pop_back();
      if (worst.depth == kMaxHalvings)
        fail(ErrorKind::ToleranceNotMet, "quadrature error estimate " + std::to_string(total_err) +
                                             " exceeds tolerance " + std::to_string(tol) + " (panel [" +
                                             std::to_string(worst.a) + ", " + std::to_string(worst.b) + "])");
      const double m = 0.5 * (worst.a + worst.b);
      panels.push_back(make_panel(f, worst.a, m, rule, rule2, worst.depth + 1));
      std::push_heap(panels.begin(), panels.end(), less);
      panels.push_back(make_panel(f, m, worst.b, rule, rule2, worst.depth + 1));
      std::push_heap(panels.begin(), panels.end(), less);
      total_err = 0;
      for (const auto& p : panels) total_err += p.err;
    }
  }
  QuadResult r;
  for (const auto& p : panels) {
    r.value += p.fine;
    r.err += p.err;
  }
  return r;
}

}  // namespace detail

/// Panel-summed Gauss–Legendre integral. The value is the order-2n result and
/// the error estimate is the sum over panels of |Q_n - Q_2n|. While the
/// estimate exceeds tol the worst panel is bisected, each panel at most 8 times.
template <class F>
QuadResult integrate(F&& f, const GradedMesh& mesh, const QuadRule& rule,
                     double tol = std::numeric_limits<double>::infinity()) {
  const QuadRule& fine = gauss_legendre(2 * rule.order);
  const auto& bp = mesh.breakpoints();
  std::vector<detail::PanelState> panels;
  panels.reserve(bp.size() - 1);
  for (std::size_t p = 0; p + 1 < bp.size(); ++p) panels.push_back(detail::make_panel(f, bp[p], bp[p + 1], rule, fine, 0));
  return detail::refine_panels(f, std::move(panels), rule, fine, tol);
}

}  // namespace qsdist
