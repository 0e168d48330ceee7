#include <gtest/gtest.h>

#include <cmath>

#include "fixture.hpp"
#include "qsdist/bounds.hpp"
#include "qsdist/continuation.hpp"

using namespace qsdist;

namespace {

const LaplaceEngine& engine() {
  static const DecayFit fit = fit_decay(fixture::converged_grid(), 30, 150);
  static const LaplaceEngine e(fixture::converged_grid(), fit);
  return e;
}

double calibrated_a() {
  static const double a = calibrate_a(engine()).a;
  return a;
}

double eps_hat() {
  static const double e = *certify_sup_bound(engine(), 1.0).eps_hat;
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

}  // namespace

TEST(ContinuePsi, SafePointIsDirect) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const PsiSample c = continue_psi(ComplexPoint(1.0, 2.5), cache);
  const PsiSample d = engine().psi(cplx(1.0, 2.5));
  EXPECT_EQ(c.method, PsiMethod::DirectQuadrature);
  EXPECT_LE(std::abs(c.value - d.value), d.err_est);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(ContinuePsi, ForcedShiftAgreesWithDirectAtHalf) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const PsiSample b = continue_psi_forced(ComplexPoint(0.5, 0.0), cache);
  const PsiSample d = engine().psi(cplx(0.5, 0.0));
  EXPECT_EQ(b.method, PsiMethod::ShiftIdentity);
  EXPECT_GE(b.shift_depth, 1);
  RecordProperty("difference", std::to_string(std::abs(b.value - d.value)));
  EXPECT_LE(std::abs(b.value - d.value), b.err_est + d.err_est);
}

TEST(ContinuePsi, OverlapStripConsistency) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const ConsistencyCheck c = continuation_consistency(cache, 10, 7);
  RecordProperty("worst_ratio", std::to_string(c.worst_ratio));
  EXPECT_TRUE(c.pass);
  EXPECT_EQ(c.continued.size(), 10u);
}

TEST(ContinuePsi, LeftHalfPlaneIsFiniteAndCached) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const PsiSample p = continue_psi(ComplexPoint(-0.05, 3.0), cache);
  EXPECT_TRUE(std::isfinite(p.value.real()) && std::isfinite(p.value.imag()));
  EXPECT_LT(p.err_est, cache.options().admission_tol);
  EXPECT_GT(cache.size(), 0u);
  const std::size_t before = cache.taylor_evaluations();
  const PsiSample again = continue_psi(ComplexPoint(-0.05, 3.0), cache);
  EXPECT_EQ(again.value, p.value);
  EXPECT_EQ(cache.taylor_evaluations(), before);
}

TEST(ContinuePsi, TaylorInsideCone) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const double y = -10.0;
  ASSERT_TRUE(cache.in_cone(-0.2, y));
  ASSERT_TRUE(cache.radius_ok(-0.2, y));
  const PsiSample p = cache.continue_psi(ComplexPoint(-0.2, y), 0);
  EXPECT_EQ(p.method, PsiMethod::Taylor);
  EXPECT_EQ(p.shift_depth, 0);
  // the default route always takes at least one shift; both must agree
  const PsiSample q = continue_psi(ComplexPoint(-0.2, y), cache);
  EXPECT_EQ(q.method, PsiMethod::ShiftIdentity);
  EXPECT_GE(q.shift_depth, 1);
  EXPECT_LE(std::abs(p.value - q.value), p.err_est + q.err_est);
}

TEST(ContinuePsi, OutOfRange) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  EXPECT_EQ(kind_of([&] { continue_psi(ComplexPoint(-6.0, 0.0), cache); }), ErrorKind::OutOfRange);
  EXPECT_EQ(kind_of([&] { continue_psi(ComplexPoint(0.0, 301.0), cache); }), ErrorKind::OutOfRange);
}

TEST(ContinuePsi, ShiftLimit) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a(), .max_shift = 3});
  EXPECT_EQ(kind_of([&] { continue_psi(ComplexPoint(-0.05, 20.0), cache); }), ErrorKind::RadiusExceeded);
}

TEST(Contour, Preconditions) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  EXPECT_EQ(kind_of([&] { ContourIntegrator(cache, 0.01, ContourOptions{}); }), ErrorKind::EpsilonUnavailable);
  EXPECT_EQ(kind_of([&] { ContourIntegrator(cache, eps_hat(), ContourOptions{.eps_hat = eps_hat()}); }),
            ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { ContourIntegrator(cache, 0.01, ContourOptions{.tolerance = 1e-5, .eps_hat = eps_hat()}); }),
            ErrorKind::TailBudgetExceeded);
}

TEST(Contour, RecoversGridAndDecays) {
  ContinuationCache cache(engine(), ContinuationOptions{.c1 = calibrated_a()});
  const double eta = eps_hat() / 4;
  const ContourIntegrator ci(cache, eta, ContourOptions{.eps_hat = eps_hat()});
  RecordProperty("y_max", std::to_string(ci.y_max()));
  RecordProperty("M", std::to_string(ci.m_const()));
  RecordProperty("C", std::to_string(ci.c_apriori()));
  EXPECT_GE(ci.y_max(), 2.0 / (std::numbers::pi * 4e-3));
  const GridCharFn& f = fixture::converged_grid();
  std::map<double, ContourResult> out;
  for (double t : {5.0, 10.0, 20.0}) {
    const ContourResult r = ci.recover(t);
    out[t] = r;
    const double diff = std::abs(r.value - f(t));
    RecordProperty("diff_t" + std::to_string(int(t)), std::to_string(diff));
    EXPECT_LE(diff, r.budget()) << t;
    EXPECT_LE(std::abs(r.value), r.c_apriori * std::exp(-eta * t) / t + r.budget()) << t;
  }
  // doubling t shrinks the value
  for (double t : {5.0, 10.0}) {
    const double lhs = std::abs(out[2 * t].value);
    EXPECT_LE(lhs, std::abs(out[t].value) * std::exp(-eta * t) * 2 + out[2 * t].budget()) << t;
  }
  EXPECT_GT(cache.max_shift_depth(), 1);
}
