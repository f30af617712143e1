#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace vstab;

namespace {

IndexSeries series_of(const std::vector<double>& v) {
  IndexSeries s;
  s.kind = IndexKind::ld_vsi;
  for (std::size_t k = 0; k < v.size(); ++k) s.push(0.01 * static_cast<double>(k), 2, v[k]);
  return s;
}

}  // namespace

TEST(Filter, ConstantGivesZero) {
  std::vector<double> x(50, 3.7);
  for (double d : filtered_increment(x, 10)) EXPECT_EQ(d, 0.0);
}

TEST(Filter, RampIdentity) {
  const double slope = 2.5, h = 0.01;
  for (int t : {1, 3, 10}) {
    std::vector<double> x;
    for (int k = 0; k < 60; ++k) x.push_back(slope * h * k + 0.4);
    auto d = filtered_increment(x, t);
    ASSERT_EQ(d.size(), x.size() - 2 * static_cast<std::size_t>(t) + 1);
    for (double v : d) EXPECT_NEAR(v, slope * t * h, 1e-12);
  }
}

TEST(Filter, UnitWindowIsFirstDifference) {
  std::vector<double> x{1.0, 4.0, 2.0, 8.0, 5.0};
  auto d = filtered_increment(x, 1);
  ASSERT_EQ(d.size(), 4u);
  for (std::size_t k = 0; k < d.size(); ++k) EXPECT_EQ(d[k], x[k + 1] - x[k]);
  EXPECT_EQ(increment_offset(1), 1u);
}

TEST(Filter, ShortSeriesEmpty) {
  std::vector<double> x(19, 1.0);
  EXPECT_TRUE(filtered_increment(x, 10).empty());
  EXPECT_THROW(filtered_increment(x, 0), DomainError);
}

TEST(LdVsi, LinearSeriesGiveConstantIndex) {
  std::vector<double> ax, p, pi;
  for (int k = 0; k < 40; ++k) {
    ax.push_back(0.01 * k);
    p.push_back(1.0 + 0.03 * k);
    pi.push_back(1.0 - 0.01 * k);
  }
  FilterConfig f;
  f.window_samples = 4;
  auto s = ld_vsi(ax, p, pi, f, 2);
  ASSERT_EQ(s.size(), 40u - 7u);
  EXPECT_EQ(s.axis.front(), ax[7]);
  for (double v : s.value) EXPECT_NEAR(v, 3.0, 1e-9);
}

TEST(LdVsi, FlatDenominatorCarriesForward) {
  std::vector<double> ax, p, pi;
  for (int k = 0; k < 30; ++k) {
    ax.push_back(k);
    p.push_back(0.1 * k);
    pi.push_back(k < 12 ? 1.0 - 0.02 * k : 1.0 - 0.02 * 11);
  }
  FilterConfig f;
  f.window_samples = 2;
  auto s = ld_vsi(ax, p, pi, f, 2);
  bool carried = false;
  for (std::size_t k = 1; k < s.size(); ++k)
    if (s.carried[k]) {
      carried = true;
      EXPECT_EQ(s.value[k], s.value[k - 1]);
    }
  EXPECT_TRUE(carried);
  EXPECT_THROW(ld_vsi(ax, p, std::vector<double>(3, 0.0), f, 2), DomainError);
}

TEST(Onset, AllPositiveNoAlarm) {
  EXPECT_TRUE(detect_onset(series_of(std::vector<double>(30, 2.0))).empty());
}

TEST(Onset, BlipSuppressed) {
  std::vector<double> v(30, 1.0);
  v[10] = v[11] = -1.0;
  EXPECT_TRUE(detect_onset(series_of(v), 3).empty());
  v[12] = -1.0;
  auto ev = detect_onset(series_of(v), 3);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].kind, AlarmKind::onset);
  EXPECT_EQ(ev[0].axis_value, 0.01 * 12);
  EXPECT_EQ(ev[1].kind, AlarmKind::cleared);
}

TEST(Onset, HysteresisMonotone) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v;
    for (int k = 0; k < 200; ++k) v.push_back(0.5 - 0.006 * k + n(rng));
    auto count = [&](int h) {
      std::size_t c = 0;
      for (const auto& e : detect_onset(series_of(v), h))
        if (e.kind == AlarmKind::onset) ++c;
      return c;
    };
    for (int h = 1; h < 6; ++h) EXPECT_GE(count(h), count(h + 1));
  }
}

TEST(Onset, CollapseProximityAfterOnset) {
  std::vector<double> v{1, 1, -1, -1, -1, -5, -60, -80};
  auto ev = detect_onset(series_of(v), 3, -50.0);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[1].kind, AlarmKind::collapse_proximity);
  EXPECT_EQ(ev[1].pi2_value, -60.0);
}

TEST(Onset, AlarmCsvHeader) {
  std::ostringstream os;
  write_alarms(os, {{AlarmKind::onset, 7.2, 2, -0.5}});
  EXPECT_EQ(os.str(), "axis,bus,kind,pi2\n7.2,2,onset,-0.5\n");
}

class ThreeBusSweep : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ScenarioConfig cfg;
    cfg.case_path = fx::data("case3_zip.m");
    cfg.monitored_buses = {2};
    cfg.indices = {IndexKind::ls_vsi, IndexKind::ld_vsi};
    cfg.sample_step = 0.01;
    out_ = new ExperimentOutput(run_scenario(cfg));
  }
  static void TearDownTestSuite() { delete out_; }
  static ExperimentOutput* out_;
};
ExperimentOutput* ThreeBusSweep::out_ = nullptr;

TEST_F(ThreeBusSweep, SignAgreesWithCentralDifferences) {
  const auto& b = out_->buses[0];
  const auto& s = b.ld_vsi;
  const std::size_t off = increment_offset(10);
  int agree = 0, total = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const std::size_t i = off + j - 9;  // the filtered increment is centered about a window back
    if (i < 1 || i + 1 >= b.axis.size() || s.carried[j]) continue;
    const double dp = b.p_demand[i + 1] - b.p_demand[i - 1], dpi = b.pi1_norm[i + 1] - b.pi1_norm[i - 1];
    const double cd = dp / -dpi;
    if (std::abs(cd) < 1e-3 || std::abs(s.value[j]) < 1e-3) continue;
    ++total;
    agree += (cd > 0) == (s.value[j] > 0);
  }
  ASSERT_GT(total, 100);
  EXPECT_GE(agree, total - 10);
}

TEST_F(ThreeBusSweep, MagnitudeGrowsTowardCollapse) {
  const auto& s = out_->buses[0].ld_vsi;
  auto flips = sign_flips(s);
  ASSERT_EQ(flips.size(), 1u);
  double at_flip = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.axis[k] >= flips[0]) {
      at_flip = std::abs(s.value[k]);
      break;
    }
  EXPECT_GT(std::abs(s.value.back()), 10 * at_flip);
  EXPECT_LT(s.value.back(), 0.0);
}

TEST_F(ThreeBusSweep, OneOnsetThenCollapseBeforeNose) {
  const auto& al = out_->buses[0].alarms;
  std::size_t onsets = 0, collapses = 0;
  for (const auto& e : al) {
    onsets += e.kind == AlarmKind::onset;
    collapses += e.kind == AlarmKind::collapse_proximity;
  }
  EXPECT_EQ(onsets, 1u);
  EXPECT_EQ(collapses, 1u);
  ASSERT_GE(al.size(), 2u);
  EXPECT_LT(al[0].axis_value, al[1].axis_value);
  EXPECT_LT(al[1].axis_value, find_snbp(out_->trace));
}
