#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace vstab;

TEST(CaseModel, ThreeBusFixtureCounts) {
  Case c = fx::three_bus();
  EXPECT_EQ(c.n(), 3u);
  EXPECT_EQ(c.branch_count(), 3u);
  EXPECT_EQ(c.zip_loads.size(), 2u);
  EXPECT_DOUBLE_EQ(c.load_at(2)->coeffs.alpha_p, 0.8);
  EXPECT_DOUBLE_EQ(c.load_at(2)->coeffs.gamma_q, 0.2);
}

TEST(CaseModel, Ieee30Counts) {
  Case c = fx::ieee30();
  EXPECT_EQ(c.n(), 30u);
  EXPECT_EQ(c.branch_count(), 41u);
  EXPECT_EQ(c.generators.size(), 6u);
  EXPECT_EQ(c.buses[c.slack_index()].id, 1);
}

TEST(CaseModel, ZipDefaultsToConstantPower) {
  Case c = fx::ieee30();
  for (const auto& l : c.zip_loads) {
    EXPECT_EQ(l.coeffs.gamma_p, 1.0);
    EXPECT_EQ(l.coeffs.alpha_p, 0.0);
  }
  Case z = fx::ieee30_zip();
  for (const auto& l : z.zip_loads) EXPECT_DOUBLE_EQ(l.coeffs.alpha_p, 0.9);
}

TEST(CaseModel, ZeroBranchesIsDisconnected) {
  const std::string text =
      "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n2 1 10 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n"
      "mpc.gen = [\n1 0 0 99 -99 1 100 1;\n];\nmpc.branch = [\n];\n";
  EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(CaseModel, SyntaxErrorCarriesLineNumber) {
  const std::string text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n2 1 1x0 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n";
  try {
    parse_case(text);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 4u);
  }
}

TEST(CaseModel, ValidationRejectsBadInput) {
  auto base = fx::two_bus_text(0.01, 0.05, 50, 10);
  EXPECT_NO_THROW(parse_case(base));
  // duplicate bus id
  std::string dup = base;
  dup.replace(dup.find(" 2 1 "), 5, " 1 1 ");
  EXPECT_THROW(parse_case(dup), ValidationError);
  // no slack
  std::string noslack = base;
  noslack.replace(noslack.find(" 1 3 "), 5, " 1 1 ");
  EXPECT_THROW(parse_case(noslack), ValidationError);
  // zip that does not sum to one
  EXPECT_THROW(parse_case(base + "mpc.zip = [\n2 0.5 0 0.2 0 0 1;\n];\n"), ValidationError);
  // zero impedance
  EXPECT_THROW(parse_case(fx::two_bus_text(0, 0, 50, 10)), ValidationError);
}

TEST(CaseModel, PerUnitConversionOnParse) {
  Case c = parse_case(fx::two_bus_text(0.01, 0.05, 50, 10, 200.0));
  EXPECT_DOUBLE_EQ(c.load_at(2)->p_nominal, 0.25);
  EXPECT_DOUBLE_EQ(c.load_at(2)->q_nominal, 0.05);
}

TEST(Admittance, TwoBusIdentity) {
  Case c = parse_case(fx::two_bus_text(0.02, 0.1, 10, 0));
  auto y = build_admittance(c);
  const cplx yl = 1.0 / cplx(0.02, 0.1);
  EXPECT_LT(std::abs(y.at(0, 0) - yl), 1e-14);
  EXPECT_LT(std::abs(y.at(1, 1) - yl), 1e-14);
  EXPECT_LT(std::abs(y.at(0, 1) + yl), 1e-14);
  EXPECT_LT(std::abs(y.at(1, 0) + yl), 1e-14);
}

TEST(Admittance, ThreeBusOffDiagonal) {
  Case c = fx::three_bus();
  auto y = build_admittance(c);
  const cplx expect = -1.0 / cplx(0.0074, 0.0372);
  EXPECT_LT(std::abs(y.at(c.bus_index(1), c.bus_index(3)) - expect), 1e-12);
  EXPECT_LT(std::abs(y.at(c.bus_index(1), c.bus_index(2)) + 1.0 / cplx(0.01, 0.05)), 1e-12);
}

TEST(Admittance, ReciprocityWithoutLtc) {
  Case c = fx::ieee30();
  c.ltc_branches.clear();
  for (auto& b : fx::ieee30().ltc_branches) {
    Branch plain = b;
    c.branches.push_back(plain);
  }
  validate_case(c);
  auto y = build_admittance(c);
  for (std::size_t i = 0; i < c.n(); ++i)
    for (std::size_t j = 0; j < c.n(); ++j) EXPECT_EQ(y.at(i, j), y.at(j, i));
}

TEST(Admittance, StructuralSymmetryAndRowRelation) {
  Case c = fx::ieee30();
  auto y = build_admittance(c);
  for (std::size_t i = 0; i < c.n(); ++i) {
    for (std::size_t j = 0; j < c.n(); ++j) EXPECT_EQ(y.at(i, j) == cplx(0, 0), y.at(j, i) == cplx(0, 0));
  }
  // diagonal = -sum of off-diagonals + shunt terms, for a case without charging or taps
  Case t = fx::three_bus();
  auto yt = build_admittance(t);
  for (std::size_t i = 0; i < t.n(); ++i) {
    cplx s = 0;
    for (std::size_t j = 0; j < t.n(); ++j)
      if (j != i) s += yt.at(i, j);
    EXPECT_LT(std::abs(yt.at(i, i) + s - t.buses[i].shunt_admittance), 1e-12);
  }
}

TEST(Admittance, OutageIdempotence) {
  Case c = fx::ieee30();
  for (int id : {1, 20, 31, 36}) {
    auto a = build_admittance(with_branch_outage(c, id));
    auto b = build_admittance(without_branch(c, id));
    Eigen::MatrixXcd d = Eigen::MatrixXcd(a.y) - Eigen::MatrixXcd(b.y);
    EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0) << "branch " << id;
  }
}

TEST(Ltc, PiEquivalentAtUnitTap) {
  LTCBranch b;
  b.series_impedance = cplx(0.0, 0.1);
  b.tap_ratio = 1.0;
  auto pi = ltc_pi_equivalent(b);
  EXPECT_EQ(pi.shunt_non_tap, cplx(0, 0));
  EXPECT_EQ(pi.shunt_tap, cplx(0, 0));
}

TEST(Ltc, PiEquivalentAgainstTwoPort) {
  LTCBranch b;
  b.series_impedance = cplx(0.0, 0.1);  // Y = -j10
  b.tap_ratio = 1.1;
  auto pi = ltc_pi_equivalent(b);
  const cplx y(0.0, -10.0);
  EXPECT_LT(std::abs(pi.shunt_non_tap - y * (0.1 / 1.1)), 1e-12);
  EXPECT_LT(std::abs(pi.shunt_tap - y * (-0.1 / 1.21)), 1e-12);
  // series Y on the non-tap side followed by an ideal a:1 transformer; port d is the non-tap side
  const double a = 1.1;
  const cplx ydd = y, yff = y / (a * a), ydf = -y / a;
  EXPECT_LT(std::abs((pi.series + pi.shunt_non_tap) - ydd), 1e-12);
  EXPECT_LT(std::abs((pi.series + pi.shunt_tap) - yff), 1e-12);
  EXPECT_LT(std::abs(-pi.series - ydf), 1e-12);
}

TEST(Ltc, NonPositiveTapIsDomainError) {
  LTCBranch b;
  b.series_impedance = cplx(0.0, 0.1);
  b.tap_ratio = 0.0;
  EXPECT_THROW(ltc_pi_equivalent(b), DomainError);
  b.tap_ratio = -1.0;
  EXPECT_THROW(ltc_pi_equivalent(b), DomainError);
}

TEST(Ltc, UnitTapMatchesPlainBranch) {
  Case with_ltc = parse_case(fx::ltc_text(1.0));
  ASSERT_EQ(with_ltc.ltc_branches.size(), 1u);
  Case plain = with_ltc;
  Branch b = plain.ltc_branches.front();
  plain.ltc_branches.clear();
  plain.branches.push_back(b);
  validate_case(plain);
  Eigen::MatrixXcd d = Eigen::MatrixXcd(build_admittance(with_ltc).y) - Eigen::MatrixXcd(build_admittance(plain).y);
  EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ltc, ContinuityNearUnitTap) {
  Case base = parse_case(fx::ltc_text(1.0));
  Eigen::MatrixXcd y1 = Eigen::MatrixXcd(build_admittance(base).y);
  for (double a : {1.0 - 1e-9, 1.0 + 1e-9}) {
    Case c = base;
    c.ltc_branches.front().tap_ratio = a;
    Eigen::MatrixXcd d = Eigen::MatrixXcd(build_admittance(c).y) - y1;
    EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Ltc, TapSideIsToBus) {
  Case c = parse_case(fx::ltc_text(1.05));
  const auto& l = c.ltc_branches.front();
  EXPECT_EQ(l.from_bus, 2);
  EXPECT_EQ(l.to_bus, 3);
  EXPECT_DOUBLE_EQ(l.tap_ratio, 1.05);
}

TEST(CaseModel, PhaseShifterRejected) {
  std::string t = fx::ltc_text(1.0);
  t.replace(t.find(" 0 1;\n 1 3"), 5, " 5 1;");
  EXPECT_THROW(parse_case(t), Error);
}
