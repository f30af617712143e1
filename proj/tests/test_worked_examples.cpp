// Worked-example values and cross-checks that are not acceptance gates. Kept apart so a
// known mismatch here does not hide regressions in the property suites.
#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace vstab;

TEST(WorkedExample, ThreeBusOnsetNearMaxPower) {
  ScenarioConfig cfg;
  cfg.case_path = fx::data("case3_zip.m");
  cfg.monitored_buses = {2};
  cfg.indices = {IndexKind::ls_vsi, IndexKind::ld_vsi};
  cfg.sample_step = 0.01;
  auto out = run_scenario(cfg);
  std::size_t onsets = 0;
  for (const auto& e : out.buses[0].alarms)
    if (e.kind == AlarmKind::onset) {
      ++onsets;
      EXPECT_NEAR(e.axis_value, 7.09, 0.1);
    }
  EXPECT_EQ(onsets, 1u);
}

TEST(WorkedExample, CtiSmallAtNose) {
  ScenarioConfig cfg = load_config(std::string(VSTAB_CONFIG_DIR) + "/ieee30_scenario1.json");
  cfg.output_dir.clear();
  cfg.indices = {IndexKind::cti};
  auto out = run_scenario(cfg);
  ASSERT_GT(out.buses[0].cti.size(), 0u);
  EXPECT_LT(out.buses[0].cti.value.back(), 0.05);
}

TEST(WorkedExample, DvsiMisidentifiesCriticalBus) {
  ScenarioConfig cfg = load_config(std::string(VSTAB_CONFIG_DIR) + "/ieee30_zip_study.json");
  Case c = load_case(cfg);
  auto tr = trace_pv_curve(c, {}, {});
  int best = -1;
  double lo = 1e9;
  for (int bus : cfg.monitored_buses) {
    try {
      const double v0 = noload_voltage(c, tr.direction, bus, {});
      const double v = dvsi(extract_local(tr.points.back().solution, c, bus), v0);
      if (v < lo) {
        lo = v;
        best = bus;
      }
    } catch (const Error&) {
    }
  }
  EXPECT_EQ(best, 26);
}

// the expanded inequality should share the sign of Pi1 on noise-free states
TEST(WorkedExample, ExpandedInequalityAgreesInSign) {
  for (auto c : {fx::three_bus(), fx::ieee30()}) {
    auto tr = trace_pv_curve(c, {}, {});
    for (const auto& p : tr.points)
      for (std::size_t i = 0; i < c.n(); ++i) {
        if (c.regulated(i)) continue;
        HParams h;
        try {
          h = compute_h_params(extract_local(p.solution, c, c.buses[i].id));
        } catch (const Error&) {
          continue;
        }
        const double raw = pi1_raw(circle_geometry(h));
        if (std::abs(raw) < 1e-9) continue;
        EXPECT_EQ(raw > 0, pi1_expanded(h) > 0) << "bus " << c.buses[i].id << " lambda " << p.lambda;
      }
  }
}
