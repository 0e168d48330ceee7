#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixture.hpp"
#include "qsdist/finite_diff.hpp"
#include "qsdist/laplace.hpp"

using namespace qsdist;

namespace {

const DecayFit& default_fit() {
  static const DecayFit fit = fit_decay(fixture::converged_grid(), 30, 150);
  return fit;
}

const LaplaceEngine& engine() {
  static const LaplaceEngine e(fixture::converged_grid(), default_fit());
  return e;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::NonFinite;
}

// f(t) = (1+t)e^{-t} on [0, 40]: ∫₀^∞ f(t) e^{-zt} dt = 1/(1+z) + 1/(1+z)²
GridCharFn exponential_grid() {
  const double h = 0.02;
  std::vector<cplx> v(2001);
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = (1 + double(j) * h) * std::exp(-double(j) * h);
  return GridCharFn(h, std::move(v));
}

}  // namespace

TEST(TransformTable, ExponentialHasClosedForm) {
  const GridCharFn f = exponential_grid();
  const TransformTable table(f, false, TailModel{0.9, 0.0}, 0.0);
  for (cplx z : {cplx(0.5, 0), cplx(1, 3), cplx(0.2, -7), cplx(2, 20)}) {
    const Moments m = table.evaluate(z, 2, false);
    const cplx u = 1.0 / (1.0 + z);
    const cplx exact = u + u * u;
    EXPECT_LT(std::abs(m.value[0] - exact), std::max(m.err[0].total(), 1e-12)) << z;
    // first moment ∫ (-t) f(t) e^{-zt} dt = d/dz of the transform
    const cplx d1 = -u * u - 2.0 * u * u * u;
    EXPECT_LT(std::abs(m.value[1] - d1), std::max(m.err[1].total(), 1e-11)) << z;
    EXPECT_NEAR(std::abs(m.value[0] - exact), 0.0, 1e-6);
  }
}

TEST(TransformTable, TailNeedsDecay) {
  const GridCharFn f = exponential_grid();
  const TransformTable table(f, false, TailModel{0.9, 0.0}, 0.0);
  EXPECT_EQ(kind_of([&] { table.evaluate(cplx(-1.5, 0), 0, false); }), ErrorKind::InvalidArgument);
}

TEST(GridErrorEstimate, ConvergedGridIsSmall) {
  const double d = grid_error_estimate(fixture::converged_grid());
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 1e-6);
}

TEST(Psi, LeadingTermAtHundred) {
  const PsiSample p = engine().psi(cplx(100, 0));
  EXPECT_LE(std::abs(100.0 * p.value - 1.0), 0.1);
  EXPECT_EQ(p.method, PsiMethod::DirectQuadrature);
}

TEST(Psi, ModulusBelowOneAtOne) {
  const PsiSample p = engine().psi(cplx(1, 0));
  EXPECT_LT(std::abs(p.value) + p.err_est, 1.0);
  EXPECT_GE(p.err_est, 0.0);
  EXPECT_TRUE(std::isfinite(p.err_est));
}

TEST(Psi, FirstDerivativeMatchesFiniteDifference) {
  const cplx s(2, 0);
  const PsiSample d = engine().psi(s, 1);
  auto g = [&](cplx z) { return engine().psi(z).value; };
  const cplx fd = central_diff(g, s, 1e-3);
  EXPECT_LE(std::abs(d.value - fd), d.err_est + 1e-8);
}

TEST(Psi, DerivativeConsistencyAtRandomPoints) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> re(0.5, 3.0), im(-5.0, 5.0);
  auto g = [&](cplx z) { return engine().psi(z).value; };
  for (int k = 0; k < 5; ++k) {
    const cplx s(re(rng), im(rng));
    const PsiSample d = engine().psi(s, 1);
    const cplx fd = richardson_diff(g, s, 1e-2);
    EXPECT_LE(std::abs(d.value - fd), d.err_est + 1e-8) << s;
  }
}

TEST(Psi, UptoMatchesSingleOrders) {
  const cplx s(1.3, -2.2);
  const auto all = engine().psi_upto(s, 3);
  ASSERT_EQ(all.size(), 4u);
  for (int n = 0; n <= 3; ++n) {
    EXPECT_EQ(all[n].order, n);
    EXPECT_NEAR(std::abs(all[n].value - engine().psi(s, n).value), 0.0, 1e-15);
  }
}

TEST(Psi, ConjugationIdentityOnRealAxis) {
  // ψ(σ) = conj ∫ conj(f(t)e^{2it log t}) e^{-σt} dt, the right side by an
  // independent GL32 sum on geometric panels near 0 and width-0.05 panels after
  const GridCharFn& f = fixture::converged_grid();
  const QuadRule& r = gauss_legendre(32);
  auto conj_transform = [&](double sigma) {
    cplx acc{};
    auto panel = [&](double a, double b) {
      for (int q = 0; q < r.order; ++q) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * r.nodes[q];
        const cplx v = std::conj(f(t) * std::polar(1.0, 2.0 * t * std::log(t)));
        acc += 0.5 * (b - a) * r.weights[q] * v * std::exp(-sigma * t);
      }
    };
    double lo = 0.05 * std::ldexp(1.0, -30);
    panel(0, lo);
    for (int k = 29; k >= 0; --k) {
      const double hi = 0.05 * std::ldexp(1.0, -k);
      panel(lo, hi);
      lo = hi;
    }
    for (int k = 1; k < 4000; ++k) panel(0.05 * k, 0.05 * (k + 1));
    return acc;
  };
  for (double sigma : {0.3, 1.0, 2.5}) {
    const PsiSample p = engine().psi(cplx(sigma, 0));
    const cplx other = conj_transform(sigma);
    const double tail = std::exp(default_fit().log_c_hat - default_fit().eta_hat * f.t_max());
    EXPECT_LE(std::abs(p.value - std::conj(other)), p.err_est + 1e-9 + tail) << sigma;
    EXPECT_NEAR(p.value.imag(), -other.imag(), p.err_est + 1e-9 + tail) << sigma;
  }
}

TEST(Psi, SigmaTooSmall) {
  EXPECT_EQ(kind_of([] { engine().psi(cplx(0.01, 3)); }), ErrorKind::SigmaTooSmall);
}

TEST(Psi, OrderLimit) {
  EXPECT_THROW(engine().psi(cplx(1, 0), 7), Error);
}

TEST(ShiftResidual, HoldsAtTwo) {
  const ShiftCheck c = shift_residual(engine(), cplx(2, 0));
  EXPECT_LE(c.residual, c.budget);
}

TEST(ShiftResidual, HoldsOffAxis) {
  const ShiftCheck c = shift_residual(engine(), cplx(0.5, 3));
  EXPECT_LE(c.residual, c.budget);
}

TEST(ShiftResidual, CorruptedGridIsDetected) {
  const GridCharFn& f = fixture::converged_grid();
  std::vector<cplx> v(f.values().begin(), f.values().end());
  for (std::size_t j = 0; j < v.size(); ++j)
    if (f.knot_t(j) > 1) v[j] *= 1.01;
  // the corrupted copy keeps the metadata residual of the clean grid
  const GridCharFn bad(f.step(), std::move(v), f.trace());
  const LaplaceEngine e(bad, default_fit());
  const ShiftCheck c = shift_residual(e, cplx(1, 0));
  const ShiftCheck clean = shift_residual(engine(), cplx(1, 0));
  RecordProperty("corrupted_residual", std::to_string(c.residual));
  RecordProperty("budget", std::to_string(c.budget));
  EXPECT_GT(c.residual, 10 * c.budget);
  EXPECT_LE(clean.residual, clean.budget);
}

TEST(ShiftResidual, TwentyRandomPoints) {
  std::mt19937_64 rng(20240513);
  std::uniform_real_distribution<double> re(0.5, 3.0), im(-5.0, 5.0);
  for (int k = 0; k < 20; ++k) {
    const cplx s(re(rng), im(rng));
    const ShiftCheck c = shift_residual(engine(), s);
    EXPECT_LE(c.residual, c.budget) << s;
  }
}

TEST(OneStepShift, ResidualBelowBudget) {
  const OneStepShift o = one_step_shift_check(engine(), cplx(1, 0.5));
  RecordProperty("residual", std::to_string(o.residual));
  EXPECT_LE(o.residual, o.budget);
  EXPECT_LT(o.budget, 1e-6);
}

TEST(LaplaceEngine, ResidualProfileCoversGrid) {
  const auto& prof = engine().residual_profile();
  EXPECT_EQ(prof.size(), std::size_t(std::lround(fixture::converged_grid().t_max() / 0.25)) + 1);
  EXPECT_EQ(prof[0], 0.0);
  for (double r : prof) EXPECT_LT(r, 1e-6);
}
