#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"

using namespace vstab;

namespace {

ScenarioConfig small_noisy() {
  ScenarioConfig cfg;
  cfg.case_path = fx::data("case3_zip.m");
  cfg.monitored_buses = {2, 3};
  cfg.sample_step = 0.05;
  NoiseModel nm;
  nm.sigma_v_mag = 0.001;
  nm.sigma_v_angle = 0.01;
  cfg.noise = nm;
  cfg.seed = 5;
  return cfg;
}

ScenarioConfig study() {
  ScenarioConfig cfg;
  cfg.case_path = fx::data("case_ieee30.m");
  cfg.monitored_buses = {30};
  cfg.seed = 2024;
  return cfg;
}

}  // namespace

TEST(Harness, ByteIdenticalOnRerun) {
  auto cfg = small_noisy();
  auto a = run_scenario(cfg), b = run_scenario(cfg);
  ASSERT_EQ(a.files.size(), b.files.size());
  for (const auto& [name, content] : a.files) EXPECT_EQ(content, b.files.at(name)) << name;
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  cfg.seed = 6;
  EXPECT_NE(run_scenario(cfg).files.at("measurements.csv"), a.files.at("measurements.csv"));
}

TEST(Harness, ManifestListsEveryArtifact) {
  auto out = run_scenario(small_noisy());
  std::set<std::string> listed;
  for (const auto& f : out.manifest.at("files")) {
    const std::string name = f.at("name");
    listed.insert(name);
    EXPECT_EQ(f.at("sha256").get<std::string>(), sha256_hex(out.files.at(name)));
    EXPECT_EQ(f.at("bytes").get<std::size_t>(), out.files.at(name).size());
  }
  for (const char* n : {"trace.csv", "measurements.csv", "lsvsi.csv", "indices.csv", "alarms.csv", "pv_bus2.svg",
                        "lsvsi_bus3.svg", "slopes_bus2.svg"})
    EXPECT_TRUE(listed.count(n)) << n;
  EXPECT_EQ(out.manifest.at("seed"), 5);
  EXPECT_EQ(out.manifest.at("version"), kVersion);
}

TEST(Harness, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Harness, WritesOutputDirectory) {
  auto cfg = small_noisy();
  cfg.output_dir = (std::filesystem::temp_directory_path() / "vstab_harness_test").string();
  std::filesystem::remove_all(cfg.output_dir);
  auto out = run_scenario(cfg);
  for (const auto& [name, content] : out.files) EXPECT_EQ(read_file(cfg.output_dir + "/" + name), content);
  auto man = nlohmann::json::parse(read_file(cfg.output_dir + "/manifest.json"));
  EXPECT_EQ(man, out.manifest);
  std::filesystem::remove_all(cfg.output_dir);
}

TEST(Harness, CsvHeaders) {
  auto out = run_scenario(small_noisy());
  auto head = [&](const char* f) {
    const auto& t = out.files.at(f);
    return t.substr(0, t.find('\n'));
  };
  EXPECT_EQ(head("trace.csv"), "lambda,bus,v_mag,v_ang,p_injected,q_injected");
  EXPECT_EQ(head("lsvsi.csv"), "axis,bus,pi1_raw,pi1_norm,rho1,rho2,delta");
  EXPECT_EQ(head("indices.csv"), "axis,bus,kind,value");
  EXPECT_EQ(head("alarms.csv"), "axis,bus,kind,pi2");
}

TEST(Config, JsonRoundTrip) {
  for (const char* f : {"sweep_3bus.json", "sweep_3bus_noisy.json", "ieee30_scenario2.json", "ieee30_scenario3.json",
                        "ieee30_zip_study.json", "noise_study.json"}) {
    auto c = load_config(std::string(VSTAB_CONFIG_DIR) + "/" + f);
    auto j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(j)), j) << f;
    EXPECT_TRUE(std::filesystem::exists(c.case_path)) << f;
  }
}

TEST(Config, RelativePathsResolveAgainstConfig) {
  auto c = load_config(std::string(VSTAB_CONFIG_DIR) + "/sweep_3bus.json");
  EXPECT_TRUE(std::filesystem::path(c.case_path).is_absolute());
  EXPECT_EQ(std::filesystem::path(c.case_path).filename(), "case3_zip.m");
}

TEST(Config, BadInputRejected) {
  auto bad = [](const std::string& text) { return config_from_json(nlohmann::json::parse(text)); };
  EXPECT_THROW(bad(R"({"events":[{"at_lambda":1,"kind":"tap_step","bus":3}]})"), ValidationError);
  EXPECT_THROW(bad(R"({"indices":["vcpi"]})"), ValidationError);
  EXPECT_THROW(bad(R"({"normalization":"sometimes"})"), ValidationError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);

  ScenarioConfig c = study();
  c.events = {{2.0, EventKind::line_outage, 999, 0.0}};
  try {
    run_scenario(c);
    FAIL() << "expected a scenario error";
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.step, "load_case");
  }
  c.events.clear();
  c.monitored_buses = {31};
  EXPECT_THROW(run_scenario(c), ScenarioError);
}

TEST(NoiseStudy, ZeroSigmaGivesZeroSpread) {
  auto cfg = study();
  cfg.noise_study.sigma_v_mag = 0.0;
  cfg.noise_study.sigma_v_angles = {0.0};
  for (const auto& r : noise_study(cfg, 30)) {
    EXPECT_EQ(r.std_dev, 0.0) << r.index;
    EXPECT_EQ(r.trials, 30);
  }
}

TEST(NoiseStudy, TooFewTrialsRejected) { EXPECT_THROW(noise_study(study(), 29), DomainError); }

TEST(NoiseStudy, DeterministicAndStable) {
  auto cfg = study();
  cfg.noise_study.sigma_v_angles = {0.5};
  auto a = noise_study(cfg, 150), b = noise_study(cfg, 150), c = noise_study(cfg, 300);
  EXPECT_EQ(noise_table_csv(a), noise_table_csv(b));
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].index, c[k].index);
    EXPECT_LT(std::abs(c[k].std_dev - a[k].std_dev), 0.2 * a[k].std_dev) << a[k].index;
  }
  EXPECT_EQ(noise_table_csv(a).substr(0, noise_table_csv(a).find('\n')),
            "sigma_v_mag,sigma_v_angle_deg,index,std,mean,trials");
}

TEST(Plot, EmptyDataRendersAxes) {
  auto svg = render_plot("lambda,bus,v_mag\n", "lambda", {"v_mag"}, {}, "empty");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("<line"), std::string::npos);
  EXPECT_EQ(svg.find("<polyline"), std::string::npos);
}

TEST(Plot, TwoSeriesRendered) {
  std::string csv = "x,a,b\n0,1,2\n1,2,3\n2,3,5\n";
  auto svg = render_plot(csv, "x", {"a", "b"}, {}, "two & more");
  std::size_t n = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++n;
  EXPECT_EQ(n, 2u);
  EXPECT_NE(svg.find("two &amp; more"), std::string::npos);
  EXPECT_THROW(render_plot(csv, "x", {"missing"}, {}, ""), Error);
}
