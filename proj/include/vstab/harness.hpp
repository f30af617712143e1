#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "baselines.hpp"
#include "continuation.hpp"
#include "lsvsi.hpp"
#include "measurements.hpp"
#include "monitor.hpp"

namespace vstab {

inline constexpr const char* kVersion = "0.1.0";

struct NoiseStudyConfig {
  int trials = 150;
  double sigma_v_mag = 0.001;
  std::vector<double> sigma_v_angles{0.01, 0.05, 0.5};
  std::optional<double> study_lambda;  // default: half of the loadability limit
  double lti_spacing = 0.015;  // about 1% of load between window snapshots
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::string case_path;
  std::string zip_sidecar;
  std::optional<ZipCoeffs> zip_default;
  std::map<int, ZipCoeffs> zip_buses;
  double default_load_scale = 1.0, default_gen_scale = 1.0;
  std::map<int, double> load_scale, gen_scale;
  std::vector<Event> events;
  std::vector<int> monitored_buses;
  std::optional<NoiseModel> noise;
  std::vector<IndexKind> indices{IndexKind::ls_vsi, IndexKind::lti, IndexKind::cti,
                                 IndexKind::nli,    IndexKind::dvsi, IndexKind::ld_vsi};
  FilterConfig filter;
  int nli_window = 10;
  double nli_epsilon = 1e-6;
  double sample_step = 0.0;  // 0: use the continuation points as samples
  std::string output_dir;
  std::uint64_t seed = 1;
  int hysteresis = 3;
  double collapse_threshold = -50.0;
  int lti_window = 8;
  bool noload_from_solved = true;
  bool refresh_normalization = true;  // false: keep the pre-event template after topology changes
  CPFOptions cpf;
  NoiseStudyConfig noise_study;

  bool wants(IndexKind k) const { return std::find(indices.begin(), indices.end(), k) != indices.end(); }
};

// ---------------------------------------------------------------- config I/O

namespace detail {

inline IndexKind index_kind_from(const std::string& s) {
  for (auto k : {IndexKind::ls_vsi, IndexKind::lti, IndexKind::cti, IndexKind::nli, IndexKind::dvsi, IndexKind::ld_vsi})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown index kind '" + s + "'");
}

inline ZipCoeffs zip_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 6) throw ValidationError("ZIP entry needs 6 coefficients");
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < 6; ++i) a[i] = j.at(i).get<double>();
  return ZipCoeffs::from_array(a);
}

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::line_outage: return "line_outage";
    case EventKind::generator_outage: return "generator_outage";
    case EventKind::shunt_switch: return "shunt_switch";
  }
  return "?";
}

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path q(p);
  if (q.is_absolute() || base.empty()) return p;
  return (base / q).lexically_normal().string();
}

}  // namespace detail

inline ScenarioConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  ScenarioConfig c;
  c.name = j.value("name", c.name);
  c.case_path = detail::resolve(j.value("case", std::string{}), base_dir);
  c.zip_sidecar = detail::resolve(j.value("zip_sidecar", std::string{}), base_dir);
  if (j.contains("zip")) {
    const auto& z = j.at("zip");
    if (z.contains("default")) c.zip_default = detail::zip_from(z.at("default"));
    if (z.contains("buses"))
      for (auto& [k, v] : z.at("buses").items()) c.zip_buses[std::stoi(k)] = detail::zip_from(v);
  }
  if (j.contains("direction")) {
    const auto& d = j.at("direction");
    c.default_load_scale = d.value("default_load", 1.0);
    c.default_gen_scale = d.value("default_gen", 1.0);
    if (d.contains("load"))
      for (auto& [k, v] : d.at("load").items()) c.load_scale[std::stoi(k)] = v.get<double>();
    if (d.contains("gen"))
      for (auto& [k, v] : d.at("gen").items()) c.gen_scale[std::stoi(k)] = v.get<double>();
  }
  if (j.contains("events"))
    for (const auto& e : j.at("events")) {
      Event ev;
      ev.at_lambda = e.at("at_lambda").get<double>();
      const std::string kind = e.at("kind").get<std::string>();
      if (kind == "line_outage") {
        ev.kind = EventKind::line_outage;
        ev.target = e.at("branch").get<int>();
      } else if (kind == "generator_outage") {
        ev.kind = EventKind::generator_outage;
        ev.target = e.at("bus").get<int>();
      } else if (kind == "shunt_switch") {
        ev.kind = EventKind::shunt_switch;
        ev.target = e.at("bus").get<int>();
        ev.delta_b = e.at("delta_b").get<double>();
      } else {
        throw ValidationError("unknown event kind '" + kind + "'");
      }
      c.events.push_back(ev);
    }
  if (j.contains("monitored_buses")) c.monitored_buses = j.at("monitored_buses").get<std::vector<int>>();
  if (j.contains("noise") && !j.at("noise").is_null()) {
    const auto& n = j.at("noise");
    NoiseModel m;
    m.sigma_v_mag = n.value("sigma_v_mag", 0.0);
    m.sigma_v_angle = n.value("sigma_v_angle", 0.0);
    if (n.contains("sigma_i_mag")) m.sigma_i_mag = n.at("sigma_i_mag").get<double>();
    if (n.contains("sigma_i_angle")) m.sigma_i_angle = n.at("sigma_i_angle").get<double>();
    c.noise = m;
  }
  if (j.contains("indices")) {
    c.indices.clear();
    for (const auto& s : j.at("indices")) c.indices.push_back(detail::index_kind_from(s.get<std::string>()));
  }
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    c.filter.window_samples = f.value("window_samples", c.filter.window_samples);
    c.filter.sample_period = f.value("sample_period", c.filter.sample_period);
    c.filter.epsilon_denominator = f.value("epsilon_denominator", c.filter.epsilon_denominator);
  }
  c.nli_window = j.value("nli_window", c.filter.window_samples);
  c.nli_epsilon = j.value("nli_epsilon", c.nli_epsilon);
  c.sample_step = j.value("sample_step", c.sample_step);
  c.output_dir = detail::resolve(j.value("output_dir", std::string{}), base_dir);
  c.seed = j.value("seed", c.seed);
  c.hysteresis = j.value("hysteresis", c.hysteresis);
  c.collapse_threshold = j.value("collapse_threshold", c.collapse_threshold);
  c.lti_window = j.value("lti_window", c.lti_window);
  const std::string nl = j.value("noload_voltage", std::string("solved"));
  if (nl != "solved" && nl != "unit") throw ValidationError("noload_voltage must be 'solved' or 'unit'");
  c.noload_from_solved = nl == "solved";
  const std::string norm = j.value("normalization", std::string("refreshed"));
  if (norm != "refreshed" && norm != "stale") throw ValidationError("normalization must be 'refreshed' or 'stale'");
  c.refresh_normalization = norm == "refreshed";
  if (j.contains("cpf")) {
    const auto& p = j.at("cpf");
    c.cpf.initial_step = p.value("initial_step", c.cpf.initial_step);
    c.cpf.max_step = p.value("max_step", c.cpf.max_step);
    c.cpf.max_lambda = p.value("max_lambda", c.cpf.max_lambda);
    c.cpf.lambda_resolution = p.value("lambda_resolution", c.cpf.lambda_resolution);
    c.cpf.pf.enforce_q_limits = p.value("q_limits", false);
    c.cpf.pf.tolerance = p.value("tolerance", c.cpf.pf.tolerance);
  }
  if (j.contains("noise_study")) {
    const auto& n = j.at("noise_study");
    c.noise_study.trials = n.value("trials", c.noise_study.trials);
    c.noise_study.sigma_v_mag = n.value("sigma_v_mag", c.noise_study.sigma_v_mag);
    if (n.contains("sigma_v_angles")) c.noise_study.sigma_v_angles = n.at("sigma_v_angles").get<std::vector<double>>();
    if (n.contains("study_lambda") && !n.at("study_lambda").is_null())
      c.noise_study.study_lambda = n.at("study_lambda").get<double>();
    c.noise_study.lti_spacing = n.value("lti_spacing", c.noise_study.lti_spacing);
  }
  return c;
}

inline nlohmann::json config_to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["case"] = c.case_path;
  if (!c.zip_sidecar.empty()) j["zip_sidecar"] = c.zip_sidecar;
  if (c.zip_default || !c.zip_buses.empty()) {
    nlohmann::json z = nlohmann::json::object();
    if (c.zip_default) z["default"] = c.zip_default->as_array();
    for (const auto& [b, v] : c.zip_buses) z["buses"][std::to_string(b)] = v.as_array();
    j["zip"] = z;
  }
  nlohmann::json d;
  d["default_load"] = c.default_load_scale;
  d["default_gen"] = c.default_gen_scale;
  for (const auto& [b, v] : c.load_scale) d["load"][std::to_string(b)] = v;
  for (const auto& [b, v] : c.gen_scale) d["gen"][std::to_string(b)] = v;
  j["direction"] = d;
  j["events"] = nlohmann::json::array();
  for (const auto& e : c.events) {
    nlohmann::json ev{{"at_lambda", e.at_lambda}, {"kind", detail::event_kind_name(e.kind)}};
    if (e.kind == EventKind::line_outage) ev["branch"] = e.target;
    else ev["bus"] = e.target;
    if (e.kind == EventKind::shunt_switch) ev["delta_b"] = e.delta_b;
    j["events"].push_back(ev);
  }
  j["monitored_buses"] = c.monitored_buses;
  if (c.noise) {
    j["noise"] = {{"sigma_v_mag", c.noise->sigma_v_mag},
                  {"sigma_v_angle", c.noise->sigma_v_angle},
                  {"sigma_i_mag", c.noise->i_mag()},
                  {"sigma_i_angle", c.noise->i_angle()}};
  } else {
    j["noise"] = nullptr;
  }
  j["indices"] = nlohmann::json::array();
  for (auto k : c.indices) j["indices"].push_back(to_string(k));
  j["filter"] = {{"window_samples", c.filter.window_samples},
                 {"sample_period", c.filter.sample_period},
                 {"epsilon_denominator", c.filter.epsilon_denominator}};
  j["nli_window"] = c.nli_window;
  j["nli_epsilon"] = c.nli_epsilon;
  j["sample_step"] = c.sample_step;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["hysteresis"] = c.hysteresis;
  j["collapse_threshold"] = c.collapse_threshold;
  j["lti_window"] = c.lti_window;
  j["noload_voltage"] = c.noload_from_solved ? "solved" : "unit";
  j["normalization"] = c.refresh_normalization ? "refreshed" : "stale";
  j["cpf"] = {{"initial_step", c.cpf.initial_step},
              {"max_step", c.cpf.max_step},
              {"max_lambda", c.cpf.max_lambda},
              {"lambda_resolution", c.cpf.lambda_resolution},
              {"q_limits", c.cpf.pf.enforce_q_limits},
              {"tolerance", c.cpf.pf.tolerance}};
  nlohmann::json ns{{"trials", c.noise_study.trials},
                    {"sigma_v_mag", c.noise_study.sigma_v_mag},
                    {"sigma_v_angles", c.noise_study.sigma_v_angles},
                    {"lti_spacing", c.noise_study.lti_spacing}};
  ns["study_lambda"] = c.noise_study.study_lambda ? nlohmann::json(*c.noise_study.study_lambda) : nlohmann::json(nullptr);
  j["noise_study"] = ns;
  return j;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return config_from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------- helpers

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline Case load_case(const ScenarioConfig& c) {
  if (c.case_path.empty()) throw ValidationError("config has no case path");
  std::string text = read_file(c.case_path);
  if (!c.zip_sidecar.empty()) text += "\n" + read_file(c.zip_sidecar);
  Case cs = parse_case(text);
  if (c.zip_default) set_zip_default(cs, *c.zip_default);
  for (const auto& [b, z] : c.zip_buses) set_zip(cs, b, z);
  validate_case(cs);
  for (int b : c.monitored_buses)
    if (!cs.has_bus(b)) throw ValidationError("monitored bus " + std::to_string(b) + " not in case");
  for (const auto& e : c.events) {
    if (e.kind == EventKind::line_outage && !cs.find_branch(e.target))
      throw ValidationError("event references unknown branch " + std::to_string(e.target));
    if (e.kind != EventKind::line_outage && !cs.has_bus(e.target))
      throw ValidationError("event references unknown bus " + std::to_string(e.target));
  }
  return cs;
}

inline Direction make_direction(const ScenarioConfig& c, const Case& cs) {
  Direction d{std::vector<double>(cs.n(), c.default_load_scale), std::vector<double>(cs.n(), c.default_gen_scale)};
  for (const auto& [b, v] : c.load_scale) d.load[cs.bus_index(b)] = v;
  for (const auto& [b, v] : c.gen_scale) d.gen[cs.bus_index(b)] = v;
  return d;
}

inline std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(s);
}

// voltage magnitude at `bus` in the no-load state of `cs`
inline double noload_voltage(const Case& cs, const Direction& dir, int bus, const PFOptions& opt) {
  PFOptions o = opt;
  o.flat_start = true;
  PFSolution s = solve_power_flow(cs, 0.0, o, nullptr, dir);
  if (!s.converged) throw TraceError("no-load state did not converge");
  return std::abs(s.at(cs, bus));
}

// ---------------------------------------------------------------- CSV writers

inline void write_trace(std::ostream& os, const PVTrace& tr) {
  os << "lambda,bus,v_mag,v_ang,p_injected,q_injected\n";
  for (std::size_t k = 0; k < tr.points.size(); ++k) {
    const auto& p = tr.points[k];
    const Case& c = tr.case_at(k);
    for (std::size_t i = 0; i < c.n(); ++i)
      os << csv::num(p.lambda) << ',' << c.buses[i].id << ',' << csv::num(std::abs(p.solution.v[i])) << ','
         << csv::num(std::arg(p.solution.v[i])) << ',' << csv::num(p.p_injected[i]) << ','
         << csv::num(p.q_injected[i]) << '\n';
  }
}

struct LsVsiRow {
  double axis;
  int bus;
  double pi1_raw, pi1_norm, rho1, rho2, delta;
};

inline void write_lsvsi(std::ostream& os, const std::vector<LsVsiRow>& rows) {
  os << "axis,bus,pi1_raw,pi1_norm,rho1,rho2,delta\n";
  for (const auto& r : rows)
    os << csv::num(r.axis) << ',' << r.bus << ',' << csv::num(r.pi1_raw) << ',' << csv::num(r.pi1_norm) << ','
       << csv::num(r.rho1) << ',' << csv::num(r.rho2) << ',' << csv::num(r.delta) << '\n';
}

// ---------------------------------------------------------------- SVG

struct PlotTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline PlotTable read_table(const std::string& text) {
  PlotTable t;
  std::istringstream is(text);
  std::string line;
  if (std::getline(is, line)) t.header = csv::split(line);
  while (std::getline(is, line))
    if (!line.empty()) t.rows.push_back(csv::split(line));
  return t;
}

namespace detail {

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else if (ch == '"') o += "&quot;";
    else o += ch;
  }
  return o;
}

}  // namespace detail

// line plot of y columns against x; `filter` keeps rows where column == value
inline std::string render_plot(const std::string& csv_text, const std::string& x,
                               const std::vector<std::string>& ys,
                               const std::vector<std::pair<std::string, std::string>>& filter = {},
                               const std::string& title = {}) {
  PlotTable t = read_table(csv_text);
  auto col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw ValidationError("plot: no column '" + name + "'");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  std::vector<std::string> ylist = ys;
  // a "kind" column splits long-form index tables into one series per kind
  const bool by_kind = ylist.size() == 1 && ylist[0] == "value" &&
                       std::find(t.header.begin(), t.header.end(), "kind") != t.header.end();
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  if (!t.header.empty()) {
    const std::size_t xc = col(x);
    std::vector<std::pair<std::size_t, std::string>> fc;
    for (const auto& [k, v] : filter) fc.push_back({col(k), v});
    std::vector<std::size_t> yc;
    for (const auto& y : ylist) yc.push_back(col(y));
    const std::size_t kc = by_kind ? col("kind") : 0;
    auto series_for = [&](const std::string& name) -> std::vector<std::pair<double, double>>& {
      for (auto& s : series)
        if (s.first == name) return s.second;
      series.push_back({name, {}});
      return series.back().second;
    };
    if (!by_kind)
      for (const auto& y : ylist) series_for(y);
    for (const auto& r : t.rows) {
      bool keep = r.size() == t.header.size();
      for (const auto& [c, v] : fc) keep = keep && r[c] == v;
      if (!keep) continue;
      double xv = std::strtod(r[xc].c_str(), nullptr);
      for (std::size_t k = 0; k < yc.size(); ++k) {
        if (r[yc[k]].empty()) continue;
        double yv = std::strtod(r[yc[k]].c_str(), nullptr);
        if (!std::isfinite(xv) || !std::isfinite(yv)) continue;
        series_for(by_kind ? r[kc] : ylist[k]).push_back({xv, yv});
      }
    }
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (const auto& [a, b] : s.second) {
      if (!any) {
        x0 = x1 = a;
        y0 = y1 = b;
        any = true;
      }
      x0 = std::min(x0, a);
      x1 = std::max(x1, a);
      y0 = std::min(y0, b);
      y1 = std::max(y1, b);
    }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double W = 640, H = 400, L = 70, R = 20, T = 30, B = 50;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  o << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  if (!title.empty()) o << "<text x=\"320\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << detail::xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << detail::fmt(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << detail::fmt(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << detail::fmt(py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
      << detail::fmt(yv) << "</text>\n";
  }
  std::string ylabel;
  for (std::size_t k = 0; k < ylist.size(); ++k) ylabel += (k ? ", " : "") + ylist[k];
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << detail::xml_escape(x) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << detail::xml_escape(ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 6];
    if (!series[s].second.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < series[s].second.size(); ++k)
        o << (k ? " " : "") << detail::fmt(px(series[s].second[k].first), 6) << ','
          << detail::fmt(py(series[s].second[k].second), 6);
      o << "\"/>\n";
    }
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << c
      << "\">" << detail::xml_escape(series[s].first) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------- scenario

struct Sample {
  double lambda;
  std::size_t stage;
  PFSolution solution;
};

struct BusSeries {
  int bus;
  std::vector<LocalMeasurement> measurements;  // as fed to the indices (noisy when noise is set)
  std::vector<double> axis, p_demand, conductance, pi1_norm;
  std::vector<LsVsiRow> lsvsi;
  IndexSeries lti, cti, dvsi, nli, ld_vsi;
  std::vector<AlarmEvent> alarms;
  std::size_t index_failures = 0;
};

struct ExperimentOutput {
  nlohmann::json manifest;
  PVTrace trace;
  std::vector<Sample> samples;
  std::vector<BusSeries> buses;
  std::map<std::string, std::string> files;  // name -> content
};

inline std::vector<Sample> sample_trace(const PVTrace& tr, const ScenarioConfig& cfg, const std::vector<Event>& events) {
  std::vector<Sample> out;
  if (!(cfg.sample_step > 0.0)) {
    for (const auto& p : tr.points) out.push_back({p.lambda, p.stage, p.solution});
    return out;
  }
  std::vector<double> at;
  for (const auto& e : events) at.push_back(e.at_lambda);
  std::sort(at.begin(), at.end());
  const double last = tr.points.back().lambda;
  std::vector<std::unique_ptr<PowerFlowProblem>> probs;
  for (const auto& st : tr.stages) probs.push_back(std::make_unique<PowerFlowProblem>(st, tr.direction));
  const PFSolution* warm = nullptr;
  std::size_t prev_stage = 0;
  for (long k = 0;; ++k) {
    // integer multiples keep grid values exact in decimal print
    const double lam = std::round(static_cast<double>(k) * cfg.sample_step * 1e12) / 1e12;
    if (lam > last + 1e-12) break;
    std::size_t stage = 0;
    while (stage < at.size() && at[stage] <= lam) ++stage;
    stage = std::min(stage, tr.stages.size() - 1);
    if (stage != prev_stage) warm = nullptr;
    // nearest trace point of this stage at or below lam as fallback start
    const std::vector<cplx>* start = warm ? &warm->v : nullptr;
    if (!start)
      for (const auto& p : tr.points)
        if (p.stage == stage && p.lambda <= lam + 1e-12) start = &p.solution.v;
    PFSolution s = probs[stage]->solve(lam, cfg.cpf.pf, start);
    if (!s.converged) break;
    out.push_back({lam, stage, std::move(s)});
    warm = &out.back().solution;
    prev_stage = stage;
    if (out.capacity() == out.size()) {
      // keep the warm pointer valid across reallocation
      out.reserve(out.size() * 2 + 16);
      warm = &out.back().solution;
    }
  }
  return out;
}

// noisy copies of all bus voltages and load currents for the centralized baseline
inline std::pair<std::vector<cplx>, std::vector<cplx>> noisy_full_state(const PFSolution& sol, const AdmittanceMatrix& y,
                                                                        const NoiseModel* noise, std::mt19937_64& rng) {
  std::vector<cplx> v = sol.v;
  Eigen::Map<const Eigen::VectorXcd> vv(sol.v.data(), static_cast<Eigen::Index>(sol.v.size()));
  Eigen::VectorXcd inj = y.y * vv;
  std::vector<cplx> il(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) il[k] = -inj[static_cast<Eigen::Index>(k)];
  if (noise)
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = perturb_polar(v[k], noise->sigma_v_mag, noise->sigma_v_angle, rng);
      il[k] = perturb_polar(il[k], noise->i_mag(), noise->i_angle(), rng);
    }
  return {v, il};
}

// every local index for one bus from its ordered measurement stream; v0 is the no-load voltage per sample,
// `references` (optional) fixes the LS-VSI normalizer per sample instead of rebuilding it from each snapshot
inline BusSeries analyze_bus(int bus, std::vector<LocalMeasurement> ms, const std::vector<double>& v0,
                             const ScenarioConfig& cfg, const std::vector<double>& references = {}) {
  BusSeries bs;
  bs.bus = bus;
  bs.lti.kind = IndexKind::lti;
  bs.cti.kind = IndexKind::cti;
  bs.dvsi.kind = IndexKind::dvsi;
  bs.nli.kind = IndexKind::nli;
  bs.ld_vsi.kind = IndexKind::ld_vsi;
  std::vector<std::pair<cplx, cplx>> window;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const LocalMeasurement& m = ms[k];
    const double ax = m.axis, ref = v0.empty() ? 1.0 : v0[std::min(k, v0.size() - 1)];
    const cplx s = m.injection();
    const double vm = std::abs(m.v_phasor);
    bs.axis.push_back(ax);
    bs.p_demand.push_back(-s.real());
    bs.conductance.push_back(-s.real() / (vm * vm));
    double pi1 = std::nan("");
    if (cfg.wants(IndexKind::ls_vsi) || cfg.wants(IndexKind::ld_vsi)) {
      try {
        BusIndex r;
        if (references.empty()) {
          r = evaluate_ls_vsi(m, ref);
        } else {
          r.h = compute_h_params(m);
          r.geometry = circle_geometry(r.h);
          r.result = ls_vsi(r.geometry, references[std::min(k, references.size() - 1)]);
        }
        pi1 = r.result.pi1_norm;
        bs.lsvsi.push_back({ax, bus, r.result.pi1_raw, r.result.pi1_norm, r.geometry.radius_p, r.geometry.radius_q,
                            r.geometry.center_distance});
      } catch (const Error&) {
        ++bs.index_failures;
        const double nan = std::nan("");
        bs.lsvsi.push_back({ax, bus, nan, nan, nan, nan, nan});
      }
    }
    bs.pi1_norm.push_back(pi1);
    if (cfg.wants(IndexKind::dvsi)) {
      try {
        bs.dvsi.push(ax, bus, dvsi(m, ref));
      } catch (const Error&) {
        ++bs.index_failures;
      }
    }
    if (cfg.wants(IndexKind::lti)) {
      window.push_back({m.v_phasor, m.load_current()});
      if (window.size() > static_cast<std::size_t>(cfg.lti_window)) window.erase(window.begin());
      if (window.size() == static_cast<std::size_t>(cfg.lti_window)) {
        try {
          bs.lti.push(ax, bus, lti(window).value);
        } catch (const Error&) {
          ++bs.index_failures;
        }
      }
    }
  }
  if (cfg.wants(IndexKind::nli)) bs.nli = nli(bs.axis, bs.p_demand, bs.conductance, cfg.nli_window, bus, cfg.nli_epsilon);
  if (cfg.wants(IndexKind::ld_vsi)) {
    bs.ld_vsi = ld_vsi(bs.axis, bs.p_demand, bs.pi1_norm, cfg.filter, bus);
    bs.alarms = detect_onset(bs.ld_vsi, cfg.hysteresis, cfg.collapse_threshold);
  }
  bs.measurements = std::move(ms);
  return bs;
}

inline ExperimentOutput run_scenario(const ScenarioConfig& cfg) {
  ExperimentOutput out;
  Case base;
  try {
    base = load_case(cfg);
  } catch (const Error& e) {
    throw ScenarioError("load_case", e.what());
  }
  const Direction dir = make_direction(cfg, base);
  try {
    out.trace = trace_pv_curve(base, dir, cfg.events, cfg.cpf);
  } catch (const Error& e) {
    throw ScenarioError("trace", e.what());
  }
  const PVTrace& tr = out.trace;
  out.samples = sample_trace(tr, cfg, cfg.events);

  std::vector<AdmittanceMatrix> ys;
  for (const auto& st : tr.stages) ys.push_back(build_admittance(st));

  for (std::size_t bi = 0; bi < cfg.monitored_buses.size(); ++bi) {
    const int bus = cfg.monitored_buses[bi];
    std::vector<double> v0(tr.stages.size(), 1.0);
    if (cfg.noload_from_solved)
      for (std::size_t s = 0; s < tr.stages.size(); ++s) {
        try {
          v0[s] = noload_voltage(tr.stages[s], dir, bus, cfg.cpf.pf);
        } catch (const Error& e) {
          throw ScenarioError("noload_reference", e.what());
        }
      }
    std::vector<LocalMeasurement> ms;
    std::vector<double> v0s;
    for (std::size_t k = 0; k < out.samples.size(); ++k) {
      const Sample& smp = out.samples[k];
      LocalMeasurement m;
      try {
        m = extract_local(smp.solution, tr.stages[smp.stage], bus);
      } catch (const Error& e) {
        throw ScenarioError("extract_local", e.what());
      }
      m.axis = smp.lambda;
      auto rng = seeded(cfg.seed, static_cast<std::uint64_t>(bus), k);
      if (cfg.noise) m = add_noise(m, *cfg.noise, rng);
      ms.push_back(std::move(m));
      v0s.push_back(v0[smp.stage]);
    }
    std::vector<double> refs;
    if (!cfg.refresh_normalization && !out.samples.empty()) {
      try {
        const double r0 = noload_reference(extract_local(out.samples.front().solution, tr.stages.front(), bus), v0.front());
        refs.assign(out.samples.size(), r0);
      } catch (const Error& e) {
        throw ScenarioError("noload_reference", e.what());
      }
    }
    BusSeries bs = analyze_bus(bus, std::move(ms), v0s, cfg, refs);
    if (cfg.wants(IndexKind::cti))
      for (std::size_t k = 0; k < out.samples.size(); ++k) {
        const Sample& smp = out.samples[k];
        const Case& cs = tr.stages[smp.stage];
        if (cs.regulated(cs.bus_index(bus))) continue;
        auto crng = seeded(cfg.seed, static_cast<std::uint64_t>(bus) + 1000003ULL, k);
        auto [vv, il] = noisy_full_state(smp.solution, ys[smp.stage], cfg.noise ? &*cfg.noise : nullptr, crng);
        try {
          bs.cti.push(smp.lambda, bus, cti(vv, il, ys[smp.stage], cs, bus).value);
        } catch (const Error&) {
          ++bs.index_failures;
        }
      }
    out.buses.push_back(std::move(bs));
  }

  // artifacts
  std::ostringstream trace_csv, meas_csv, ls_csv, idx_csv, alarm_csv;
  write_trace(trace_csv, tr);
  std::vector<LocalMeasurement> all;
  std::vector<LsVsiRow> rows;
  std::vector<AlarmEvent> alarms;
  for (const auto& b : out.buses) {
    all.insert(all.end(), b.measurements.begin(), b.measurements.end());
    rows.insert(rows.end(), b.lsvsi.begin(), b.lsvsi.end());
    alarms.insert(alarms.end(), b.alarms.begin(), b.alarms.end());
  }
  write_stream(meas_csv, all);
  write_lsvsi(ls_csv, rows);
  write_index_header(idx_csv);
  for (const auto& b : out.buses)
    for (const IndexSeries* s : {&b.lti, &b.cti, &b.dvsi, &b.nli, &b.ld_vsi}) write_index_rows(idx_csv, *s);
  write_alarms(alarm_csv, alarms);
  out.files["trace.csv"] = trace_csv.str();
  out.files["measurements.csv"] = meas_csv.str();
  out.files["lsvsi.csv"] = ls_csv.str();
  out.files["indices.csv"] = idx_csv.str();
  out.files["alarms.csv"] = alarm_csv.str();
  for (int bus : cfg.monitored_buses) {
    const std::string b = std::to_string(bus);
    out.files["pv_bus" + b + ".svg"] = render_plot(out.files["trace.csv"], "lambda", {"v_mag"}, {{"bus", b}}, "PV curve, bus " + b);
    out.files["lsvsi_bus" + b + ".svg"] = render_plot(out.files["lsvsi.csv"], "axis", {"pi1_norm"}, {{"bus", b}}, "LS-VSI, bus " + b);
    if (cfg.wants(IndexKind::ld_vsi) || cfg.wants(IndexKind::nli))
      out.files["slopes_bus" + b + ".svg"] = render_plot(out.files["indices.csv"], "axis", {"value"}, {{"bus", b}}, "Indices, bus " + b);
  }

  nlohmann::json man;
  man["tool"] = "vstab";
  man["version"] = kVersion;
  man["seed"] = cfg.seed;
  man["config"] = config_to_json(cfg);
  man["termination"] = to_string(tr.termination);
  man["lambda_last"] = tr.points.back().lambda;
  man["files"] = nlohmann::json::array();
  for (const auto& [name, content] : out.files)
    man["files"].push_back({{"name", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
  out.manifest = man;

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    for (const auto& [name, content] : out.files) write_file(std::filesystem::path(cfg.output_dir) / name, content);
    write_file(std::filesystem::path(cfg.output_dir) / "manifest.json", man.dump(2) + "\n");
  }
  return out;
}

// ---------------------------------------------------------------- noise study

struct NoiseStudyRow {
  double sigma_v_mag;
  double sigma_v_angle;
  std::string index;
  double std_dev;
  double mean;
  int trials;
};

inline double sample_std(const std::vector<double>& x, double* mean_out = nullptr) {
  if (x.empty()) return std::nan("");
  // shifted by the first value so identical samples give exactly zero
  double m = 0.0;
  for (double v : x) m += v - x.front();
  m /= static_cast<double>(x.size());
  if (mean_out) *mean_out = x.front() + m;
  if (x.size() < 2) return 0.0;
  double s = 0.0;
  for (double v : x) s += (v - x.front() - m) * (v - x.front() - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

inline std::vector<NoiseStudyRow> noise_study(const ScenarioConfig& cfg, int trials) {
  if (trials < 30) throw DomainError("noise study needs at least 30 trials");
  if (cfg.monitored_buses.empty()) throw ValidationError("noise study needs a monitored bus");
  const int bus = cfg.monitored_buses.front();
  Case cs = load_case(cfg);
  const Direction dir = make_direction(cfg, cs);
  PVTrace tr = trace_pv_curve(cs, dir, {}, cfg.cpf);
  const double lmax = find_snbp(tr);
  const double lam = cfg.noise_study.study_lambda.value_or(0.5 * lmax);
  const int w = std::max(cfg.lti_window, 2);
  PowerFlowProblem prob(cs, dir);
  std::vector<PFSolution> states;
  const PFSolution* warm = nullptr;
  for (int k = w - 1; k >= 0; --k) {
    PFSolution s = prob.solve(lam - k * cfg.noise_study.lti_spacing, cfg.cpf.pf, warm ? &warm->v : nullptr);
    if (!s.converged) throw ScenarioError("noise_study", "study point did not converge");
    states.push_back(std::move(s));
    warm = &states.back();
  }
  AdmittanceMatrix y = build_admittance(cs);
  const double v0 = cfg.noload_from_solved ? noload_voltage(cs, dir, bus, cfg.cpf.pf) : 1.0;
  std::vector<LocalMeasurement> clean;
  for (const auto& s : states) clean.push_back(extract_local(s, cs, bus));

  std::vector<NoiseStudyRow> rows;
  for (std::size_t lv = 0; lv < cfg.noise_study.sigma_v_angles.size(); ++lv) {
    NoiseModel nm;
    nm.sigma_v_mag = cfg.noise_study.sigma_v_mag;
    nm.sigma_v_angle = cfg.noise_study.sigma_v_angles[lv];
    if (cfg.noise) {
      nm.sigma_i_mag = cfg.noise->sigma_i_mag;
      nm.sigma_i_angle = cfg.noise->sigma_i_angle;
    }
    std::vector<double> ls, lt, ct, dv;
    for (int t = 0; t < trials; ++t) {
      auto rng = seeded(cfg.seed, lv, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(bus));
      std::vector<std::pair<cplx, cplx>> window;
      LocalMeasurement last;
      for (const auto& m : clean) {
        last = add_noise(m, nm, rng);
        window.push_back({last.v_phasor, last.load_current()});
      }
      try {
        ls.push_back(evaluate_ls_vsi(last, v0).result.pi1_norm);
      } catch (const Error&) {
      }
      try {
        dv.push_back(dvsi(last, v0));
      } catch (const Error&) {
      }
      try {
        lt.push_back(lti(window).value);
      } catch (const Error&) {
      }
      auto [vv, il] = noisy_full_state(states.back(), y, &nm, rng);
      try {
        ct.push_back(cti(vv, il, y, cs, bus).value);
      } catch (const Error&) {
      }
    }
    auto add = [&](const char* name, const std::vector<double>& x) {
      double mean = std::nan("");
      double sd = sample_std(x, &mean);
      rows.push_back({nm.sigma_v_mag, nm.sigma_v_angle, name, sd, mean, static_cast<int>(x.size())});
    };
    add("ls_vsi", ls);
    add("lti", lt);
    add("cti", ct);
    add("dvsi", dv);
  }
  return rows;
}

inline std::string noise_table_csv(const std::vector<NoiseStudyRow>& rows) {
  std::ostringstream os;
  os << "sigma_v_mag,sigma_v_angle_deg,index,std,mean,trials\n";
  for (const auto& r : rows)
    os << csv::num(r.sigma_v_mag) << ',' << csv::num(r.sigma_v_angle) << ',' << r.index << ',' << csv::num(r.std_dev)
       << ',' << csv::num(r.mean) << ',' << r.trials << '\n';
  return os.str();
}

}  // namespace vstab
