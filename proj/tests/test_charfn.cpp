#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixture.hpp"
#include "qsdist/charfn.hpp"
#include "qsdist/finite_diff.hpp"

using namespace qsdist;

namespace {

GridCharFn constant_one(double t_max, double h) {
  const auto n = static_cast<std::size_t>(std::llround(t_max / h)) + 1;
  return GridCharFn(h, std::vector<cplx>(n, cplx(1.0)));
}

GridCharFn synthetic(double t_max, double h, double (*modulus)(double)) {
  const auto n = static_cast<std::size_t>(std::llround(t_max / h)) + 1;
  std::vector<cplx> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = std::polar(modulus(j * h), 0.4 * j * h);
  v[0] = 1.0;
  return GridCharFn(h, std::move(v));
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Parse;  // sentinel for "did not throw"; callers never expect Parse here
}

}  // namespace

TEST(GridCharFn, Invariants) {
  std::vector<cplx> v(10, cplx(0.5));
  EXPECT_EQ(kind_of([&] { GridCharFn(0.1, v); }), ErrorKind::InvalidArgument);
  v[0] = 1.0;
  v[3] = cplx(1.0 + 2e-9, 0.0);
  EXPECT_EQ(kind_of([&] { GridCharFn(0.1, v); }), ErrorKind::Overshoot);
  v[3] = cplx(1.0 + 5e-10, 0.0);
  EXPECT_NO_THROW(GridCharFn(0.1, v));
  EXPECT_THROW(GridCharFn(0.0, v), Error);
}

TEST(GridCharFn, HermitianAccessorBitExact) {
  const GridCharFn& f = fixture::converged_grid();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, f.t_max());
  for (int k = 0; k < 100; ++k) {
    const double t = u(rng);
    const cplx a = f(-t), b = std::conj(f(t));
    EXPECT_EQ(a.real(), b.real());
    EXPECT_EQ(a.imag(), b.imag());
  }
}

TEST(RoesslerStep, PreservesNormalization) {
  const GridCharFn g = roessler_step(constant_one(10, 0.05));
  EXPECT_EQ(g.knot(0), cplx(1.0));
  EXPECT_EQ(g.iteration_count(), 1);
}

TEST(RoesslerStep, CenteringCancelsDrift) {
  // Im g(h)/h = O(h^2) because the centering term integrates to -1/2
  for (double h : {0.05, 0.025}) {
    const GridCharFn g = roessler_step(constant_one(10, h));
    const double slope = std::abs(g.knot(1) - std::conj(g.knot(1))) / (2 * h);
    EXPECT_LT(slope, 2 * h * h) << "h=" << h;
  }
}

TEST(RoesslerStep, MatchesTrapezoidOracleAtOne) {
  // e^{i} ∫ e^{2i(x log x + (1-x) log(1-x))} dx by a 10^6-panel trapezoid rule
  const cplx oracle(0.9321000840229705, -0.007446934088591928);
  const GridCharFn g = roessler_step(constant_one(10, 0.05));
  EXPECT_LT(std::abs(g(1.0) - oracle), 1e-9);
}

TEST(EquationResidual, ZeroAtOrigin) {
  const double t0[] = {0.0};
  EXPECT_EQ(equation_residual(constant_one(10, 0.05), t0), 0.0);
}

TEST(EquationResidual, StartingPointIsNotFixed) {
  // trapezoid oracle: |g(5) - 1| = 0.95597 for the image of f ≡ 1
  const double t5[] = {5.0};
  const double r = equation_residual(constant_one(10, 0.05), t5);
  EXPECT_GT(r, 0.01);
  EXPECT_NEAR(r, 0.9559749496560852, 1e-8);
}

TEST(EquationResidual, RejectsOutOfRange) {
  const double t[] = {11.0};
  EXPECT_EQ(kind_of([&] { equation_residual(constant_one(10, 0.05), t); }), ErrorKind::OutOfRange);
}

TEST(IterateToFixpoint, Preconditions) {
  FixpointOptions o;
  o.t_max = 5;
  EXPECT_EQ(kind_of([&] { iterate_to_fixpoint(o); }), ErrorKind::InvalidArgument);
  o = {};
  o.h = 0.1;
  EXPECT_EQ(kind_of([&] { iterate_to_fixpoint(o); }), ErrorKind::InvalidArgument);
  o = {};
  o.tol = 0;
  EXPECT_EQ(kind_of([&] { iterate_to_fixpoint(o); }), ErrorKind::InvalidArgument);
}

TEST(IterateToFixpoint, NoConvergence) {
  FixpointOptions o;
  o.t_max = 10;
  o.h = 0.05;
  o.max_iter = 3;
  EXPECT_EQ(kind_of([&] { iterate_to_fixpoint(o); }), ErrorKind::NoConvergence);
}

TEST(IterateToFixpoint, ConvergedAxioms) {
  const GridCharFn& f = fixture::converged_grid();
  EXPECT_EQ(f.size(), 10001u);
  EXPECT_EQ(f.knot(0), cplx(1.0));
  for (std::size_t j = 0; j < f.size(); ++j) ASSERT_LE(std::abs(f.knot(j)), 1.0) << j;
  EXPECT_LE(f.iteration_count(), 60);
  const auto& d = f.trace().sup_differences;
  ASSERT_EQ(int(d.size()), f.iteration_count());
  EXPECT_LT(d.back(), 1e-8);
}

TEST(IterateToFixpoint, ContractionRatio) {
  const auto& d = fixture::converged_grid().trace().sup_differences;
  double worst = 0;
  for (std::size_t k = 3; k + 1 < d.size(); ++k) {
    EXPECT_LT(d[k], d[k - 1]);
    worst = std::max(worst, d[k + 1] / d[k]);
  }
  RecordProperty("max_contraction_ratio", std::to_string(worst));
  EXPECT_LT(worst, 0.9);
}

TEST(IterateToFixpoint, ResidualAtCheckpoints) {
  const GridCharFn& f = fixture::converged_grid();
  const double pts[] = {1, 5, 10, 20, 50};
  EXPECT_LT(equation_residual(f, pts), 10 * 1e-8);
  EXPECT_LT(f.residual(), 10 * 1e-8);
}

TEST(IterateToFixpoint, MeanZero) {
  const GridCharFn& f = fixture::converged_grid();
  const cplx d = central_diff([&](cplx s) { return f(s.real()); }, cplx(0.0), f.step());
  EXPECT_LE(std::abs(d), 1e-5);
}

TEST(IterateToFixpoint, ResidualDecreasesAlongIterates) {
  GridCharFn f = constant_one(12, 0.05);
  const double pts[] = {0.5, 1, 2, 3, 5, 8};
  std::vector<double> res;
  for (int k = 0; k < 10; ++k) {
    f = roessler_step(f);
    res.push_back(equation_residual(f, pts));
  }
  for (std::size_t k = 3; k + 1 < res.size(); ++k) EXPECT_LE(res[k + 1], 1.5 * res[k]) << "k=" << k;
}

TEST(Envelope, ClosedForm) {
  EXPECT_NEAR(fill_janson_envelope(2.0), 8.0 * std::pow(2.0, -0.25), 1e-14);
  const double l = std::log(100.0);
  EXPECT_NEAR(fill_janson_envelope(100.0), 1e6 * std::exp(-l * l / (4 * std::log(2.0))), 1e-9);
  EXPECT_GT(fill_janson_envelope(100.0), 1.0);
  EXPECT_EQ(fill_janson_envelope(-7.0), fill_janson_envelope(7.0));
}

TEST(Envelope, InfimumOverP) {
  for (double t : {2.0, 50.0, 100.0, 1e3, 1e4, 1e6}) {
    double best = INFINITY;
    for (double p = 1e-7; p < 40; p *= 1.0001)
      best = std::min(best, std::exp((p * p + 6 * p) * std::log(2.0) - p * std::log(t)));
    EXPECT_NEAR(fill_janson_infimum(t) / best, 1.0, 1e-6) << t;
    EXPECT_LE(fill_janson_infimum(t), fill_janson_envelope(t) * (1 + 1e-12));
  }
}

TEST(Envelope, TrivialWhereEnvelopeExceedsOne) {
  const auto rep = envelope_certify(constant_one(10, 0.05), 1.0);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.max_ratio, 1.0);
}

TEST(Envelope, ConvergedGridPasses) {
  const auto rep = envelope_certify(fixture::converged_grid(), 10.0, 0.05);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.max_ratio, 1.05);
  EXPECT_EQ(rep.t.front(), 10.0);
}

TEST(Envelope, UnitModulusFailsBeyondCrossover) {
  // envelope < 1 only for t > 4096; a unit-modulus value at t = 10^4 violates it
  const auto n = std::size_t(10001);
  std::vector<cplx> v(n, cplx(0.0));
  v[0] = 1.0;
  v[n - 1] = 1.0;
  const GridCharFn f(1.0, v);
  const auto rep = envelope_certify(f, 10.0);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.max_ratio, 1.0 / fill_janson_envelope(1e4), 1e-6 * rep.max_ratio);
  // at t = 100, by contrast, |f| = 1 is within the envelope
  std::vector<cplx> w(201, cplx(0.0));
  w[0] = 1.0;
  w[100] = 1.0;
  EXPECT_TRUE(envelope_certify(GridCharFn(1.0, w), 10.0).pass);
}

TEST(Envelope, Precondition) { EXPECT_THROW(envelope_certify(constant_one(10, 0.05), 0.5), Error); }

TEST(FitDecay, ExactExponential) {
  const auto f = synthetic(200, 0.02, [](double t) { return std::exp(-0.3 * t); });
  const auto fit = fit_decay(f, 30, 100);
  EXPECT_NEAR(fit.eta_hat, 0.3, 1e-6);
  EXPECT_LT(fit.rms_residual, 1e-9);
}

TEST(FitDecay, Perturbed) {
  const auto f = synthetic(200, 0.02, [](double t) { return std::exp(-0.3 * t) * (1 + 0.01 * std::sin(t)); });
  const auto fit = fit_decay(f, 30, 100);
  EXPECT_NEAR(fit.eta_hat, 0.3, 1e-2);
}

TEST(FitDecay, FloorDropsKnots) {
  const auto f = synthetic(200, 0.02, [](double t) { return std::exp(-0.3 * t); });
  const auto fit = fit_decay(f, 30, 150);
  // |f| <= 1e-14 once t >= log(1e14)/0.3 ≈ 107.5
  EXPECT_LT(fit.knots_used, std::size_t((150 - 30) / 0.02));
  EXPECT_NEAR(fit.eta_hat, 0.3, 1e-6);
}

TEST(FitDecay, Errors) {
  const auto f = synthetic(200, 0.02, [](double t) { return std::exp(-0.3 * t); });
  EXPECT_EQ(kind_of([&] { fit_decay(f, 30, 30.5); }), ErrorKind::WindowTooSmall);
  EXPECT_EQ(kind_of([&] { fit_decay(f, 150, 190); }), ErrorKind::WindowTooSmall);
  EXPECT_EQ(kind_of([&] { fit_decay(f, 30, 250); }), ErrorKind::InvalidArgument);
  const auto grow = synthetic(200, 0.02, [](double t) { return 0.1 + 0.004 * t; });
  EXPECT_EQ(kind_of([&] { fit_decay(grow, 30, 150); }), ErrorKind::NoDecay);
}

TEST(FitDecay, ConvergedGridWindowSensitivity) {
  const GridCharFn& f = fixture::converged_grid();
  const auto fit = fit_decay(f, 30, 150);
  EXPECT_GT(fit.eta_hat, 0.0);
  EXPECT_TRUE(std::isfinite(fit.rms_residual));
  RecordProperty("eta_hat", std::to_string(fit.eta_hat));
  // the 1e-14 floor cuts [30, 150] off near t = 37
  EXPECT_LT(fit.knots_used, 600u);
  for (auto [lo, hi] : {std::pair{20.0, 100.0}, {25.0, 150.0}}) {
    const auto alt = fit_decay(f, lo, hi);
    EXPECT_NEAR(alt.eta_hat, fit.eta_hat, 0.02 * fit.eta_hat) << lo << "," << hi;
  }
  // without the floor the tail keeps relative accuracy out to t_max
  for (auto [lo, hi] : {std::pair{30.0, 150.0}, {50.0, 200.0}, {100.0, 200.0}}) {
    const auto alt = fit_decay(f, lo, hi, 0.0);
    EXPECT_NEAR(alt.eta_hat, fit.eta_hat, 0.05 * fit.eta_hat) << lo << "," << hi;
    EXPECT_LT(alt.rms_residual, 0.5);
  }
}

TEST(CharFnCsv, LosslessRoundTrip) {
  const GridCharFn& f = fixture::converged_grid();
  std::stringstream ss;
  write_charfn_csv(ss, f);
  const GridCharFn g = read_charfn_csv(ss);
  ASSERT_EQ(g.size(), f.size());
  EXPECT_EQ(g.step(), f.step());
  for (std::size_t j = 0; j < f.size(); ++j) {
    ASSERT_EQ(g.knot(j).real(), f.knot(j).real());
    ASSERT_EQ(g.knot(j).imag(), f.knot(j).imag());
  }
}

TEST(CharFnCsv, Malformed) {
  std::stringstream bad_header("t,re,im\n0,1,0\n");
  EXPECT_EQ(kind_of([&] { read_charfn_csv(bad_header); }), ErrorKind::Parse);
  std::stringstream truncated("t,re_f,im_f\n0,1,0\n0.1,0.9,0\n0.2,0.8");
  EXPECT_EQ(kind_of([&] { read_charfn_csv(truncated); }), ErrorKind::Parse);
  std::stringstream uneven("t,re_f,im_f\n0,1,0\n0.1,0.9,0\n0.2,0.8,0\n0.35,0.7,0\n0.4,0.6,0\n");
  EXPECT_EQ(kind_of([&] { read_charfn_csv(uneven); }), ErrorKind::Parse);
  std::stringstream junk("t,re_f,im_f\n0,1,0\n0.1,x,0\n0.2,0.8,0\n0.3,0.7,0\n0.4,0.6,0\n");
  EXPECT_EQ(kind_of([&] { read_charfn_csv(junk); }), ErrorKind::Parse);
}
