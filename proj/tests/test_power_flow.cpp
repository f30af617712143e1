#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace vstab;

TEST(ZipInjection, UnitVoltageGivesNominal) {
  ZipLoad l;
  l.p_nominal = 0.7;
  l.q_nominal = 0.2;
  l.coeffs = ZipCoeffs{0.3, 0.0, 0.7, 0.5, 0.0, 0.5};
  auto [p, q] = zip_injection(l, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(p, 0.7);
  EXPECT_DOUBLE_EQ(q, 0.2);
}

TEST(ZipInjection, ArithmeticOracle) {
  ZipLoad l;
  l.p_nominal = 1.0;
  l.q_nominal = 0.5;
  l.coeffs = ZipCoeffs{0.8, 0.0, 0.2, 0.8, 0.0, 0.2};
  auto [p, q] = zip_injection(l, 0.9, 2.0);
  EXPECT_NEAR(p, 1.696, 1e-12);
  EXPECT_NEAR(q, 0.848, 1e-12);
}

TEST(ZipInjection, ReferenceVoltageNormalizes) {
  ZipLoad l;
  l.p_nominal = 1.0;
  l.coeffs = ZipCoeffs{1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
  l.v_reference_pu = 1.05;
  EXPECT_NEAR(zip_injection(l, 1.05, 1.0).first, 1.0, 1e-14);
}

TEST(PowerFlow, NoLoadFlatStartIsUnity) {
  Case c = fx::three_bus();
  PFOptions o;
  o.flat_start = true;
  auto s = solve_power_flow(c, 0.0, o);
  ASSERT_TRUE(s.converged);
  EXPECT_LE(s.iterations, 1);
  for (auto v : s.v) EXPECT_EQ(v, cplx(1.0, 0.0));
}

TEST(PowerFlow, ThreeBusConvergesAtUnitLoad) {
  Case c = fx::three_bus();
  auto s = solve_power_flow(c, 1.0);
  ASSERT_TRUE(s.converged);
  EXPECT_LT(s.max_mismatch, 1e-8);
  EXPECT_EQ(s.v[c.slack_index()], cplx(1.0, 0.0));
  EXPECT_LT(mismatch_certificate(c, s), 1e-7);
}

TEST(PowerFlow, ThreeBusBeyondLimitFails) {
  Case c = fx::three_bus();
  EXPECT_FALSE(solve_power_flow(c, 9.5).converged);
  auto near = solve_power_flow(c, 8.9);
  ASSERT_TRUE(near.converged);
  EXPECT_FALSE(solve_power_flow(c, 9.5, {}, &near).converged);
}

TEST(PowerFlow, MismatchCertificateAlongRamp) {
  for (auto c : {fx::three_bus(), fx::ieee30(), fx::ieee30_zip()}) {
    const PFSolution* warm = nullptr;
    PFSolution prev;
    for (double lam = 0.0; lam < 2.5; lam += 0.25) {
      auto s = solve_power_flow(c, lam, {}, warm);
      ASSERT_TRUE(s.converged) << lam;
      EXPECT_LT(mismatch_certificate(c, s), 10 * 1e-8);
      EXPECT_EQ(s.v[c.slack_index()], cplx(c.buses[c.slack_index()].v_setpoint_pu, 0.0));
      prev = s;
      warm = &prev;
    }
  }
}

TEST(PowerFlow, ExplicitConstantPowerZipMatchesDefault) {
  Case a = fx::ieee30();
  Case b = a;
  set_zip_default(b, ZipCoeffs{0, 0, 1, 0, 0, 1});
  for (double lam : {0.5, 1.0, 2.0}) {
    auto sa = solve_power_flow(a, lam), sb = solve_power_flow(b, lam);
    ASSERT_TRUE(sa.converged && sb.converged);
    for (std::size_t i = 0; i < a.n(); ++i) EXPECT_LT(std::abs(sa.v[i] - sb.v[i]), 1e-10);
  }
}

TEST(PowerFlow, WarmStartEquivalence) {
  Case c = fx::ieee30_zip();
  auto base = solve_power_flow(c, 3.0);
  ASSERT_TRUE(base.converged);
  for (double lam : {3.2, 3.8, 4.5}) {
    PFOptions flat;
    flat.flat_start = true;
    auto f = solve_power_flow(c, lam, flat);
    auto w = solve_power_flow(c, lam, {}, &base);
    if (f.converged && w.converged)
      for (std::size_t i = 0; i < c.n(); ++i) EXPECT_LT(std::abs(f.v[i] - w.v[i]), 1e-8);
  }
}

TEST(PowerFlow, JacobianMatchesFiniteDifferences) {
  Case c = fx::ieee30_zip();
  PowerFlowProblem prob(c);
  auto s = prob.solve(2.0);
  ASSERT_TRUE(s.converged);
  Eigen::MatrixXd j = Eigen::MatrixXd(prob.jacobian(s.v, 2.0));
  Eigen::VectorXd x0 = prob.state(s.v);
  const double h = 1e-7;
  for (Eigen::Index k = 0; k < x0.size(); k += 7) {
    Eigen::VectorXd xp = x0, xm = x0;
    xp[k] += h;
    xm[k] -= h;
    auto vp = s.v, vm = s.v;
    prob.apply_state(xp, vp);
    prob.apply_state(xm, vm);
    Eigen::VectorXd fd = (prob.mismatch(vp, 2.0) - prob.mismatch(vm, 2.0)) / (2 * h);
    EXPECT_LT((fd - j.col(k)).cwiseAbs().maxCoeff(), 1e-5) << "column " << k;
  }
}

TEST(PowerFlow, ReactiveLimitsRespected) {
  Case c = fx::ieee30();
  PFOptions o;
  o.enforce_q_limits = true;
  const double lam = 1.4;  // limits bind well before the unconstrained nose
  auto s = solve_power_flow(c, lam, o);
  ASSERT_TRUE(s.converged);
  PowerFlowProblem prob(c);
  auto inj = prob.injections(s.v);
  int clamped = 0;
  for (const auto& g : c.generators) {
    const auto i = c.bus_index(g.bus);
    if (c.buses[i].kind == BusKind::slack) continue;
    const double qg = inj[i].imag() + prob.demand(i, std::abs(s.v[i]), lam).imag();
    EXPECT_LE(qg, g.q_max + 1e-6);
    EXPECT_GE(qg, g.q_min - 1e-6);
    clamped += std::abs(qg - g.q_max) < 1e-6 || std::abs(qg - g.q_min) < 1e-6;
  }
  EXPECT_GT(clamped, 0);
  auto free = solve_power_flow(c, lam);
  ASSERT_TRUE(free.converged);
  EXPECT_GT(std::abs(free.v[c.bus_index(30)] - s.v[c.bus_index(30)]), 1e-4);
}

TEST(PowerFlow, NonPositiveToleranceRejected) {
  PFOptions o;
  o.tolerance = 0.0;
  EXPECT_THROW(solve_power_flow(fx::three_bus(), 1.0, o), DomainError);
}
