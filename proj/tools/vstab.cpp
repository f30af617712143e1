// command-line front end: pf, cpf, lsvsi, baseline, monitor, scenario, noise-study, plot
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include <vstab/harness.hpp>

namespace fs = std::filesystem;
using namespace vstab;

namespace {

struct Globals {
  std::string case_path, out, config;
  std::optional<std::uint64_t> seed;
};

ScenarioConfig base_config(const Globals& g) {
  ScenarioConfig c = g.config.empty() ? ScenarioConfig{} : load_config(g.config);
  if (!g.case_path.empty()) c.case_path = g.case_path;
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.seed) c.seed = *g.seed;
  return c;
}

// writes to <out>/<name> when an output directory is set, else to stdout
void emit(const ScenarioConfig& c, const std::string& name, const std::string& text) {
  if (c.output_dir.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(c.output_dir);
  write_file(fs::path(c.output_dir) / name, text);
  std::cerr << "wrote " << (fs::path(c.output_dir) / name).string() << "\n";
}

std::vector<LocalMeasurement> read_stream_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path);
  return read_stream(f);
}

std::map<int, std::vector<LocalMeasurement>> by_bus(std::vector<LocalMeasurement> ms) {
  std::map<int, std::vector<LocalMeasurement>> out;
  for (auto& m : ms) out[m.bus].push_back(std::move(m));
  return out;
}

std::vector<IndexKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<IndexKind> k;
  for (const auto& n : names) k.push_back(detail::index_kind_from(n));
  return k;
}

int cmd_pf(const Globals& g, double lambda, bool q_limits, bool flat) {
  ScenarioConfig c = base_config(g);
  Case cs = load_case(c);
  PFOptions o = c.cpf.pf;
  o.enforce_q_limits = o.enforce_q_limits || q_limits;
  o.flat_start = flat;
  PFSolution s = solve_power_flow(cs, lambda, o, nullptr, make_direction(c, cs));
  PowerFlowProblem prob(cs, make_direction(c, cs));
  std::ostringstream os;
  os << "bus,v_mag,v_ang,p_injected,q_injected\n";
  if (s.converged) {
    auto inj = prob.injections(s.v);
    for (std::size_t i = 0; i < cs.n(); ++i)
      os << cs.buses[i].id << ',' << csv::num(std::abs(s.v[i])) << ',' << csv::num(std::arg(s.v[i])) << ','
         << csv::num(inj[i].real()) << ',' << csv::num(inj[i].imag()) << '\n';
  }
  emit(c, "pf.csv", os.str());
  std::cerr << "converged=" << (s.converged ? "true" : "false") << " iterations=" << s.iterations
            << " max_mismatch=" << csv::num(s.max_mismatch) << "\n";
  return s.converged ? 0 : 2;
}

int cmd_cpf(const Globals& g, std::optional<int> mp_bus, std::optional<double> max_step) {
  ScenarioConfig c = base_config(g);
  if (max_step) c.cpf.max_step = *max_step;
  Case cs = load_case(c);
  PVTrace tr = trace_pv_curve(cs, make_direction(c, cs), c.events, c.cpf);
  std::ostringstream os;
  write_trace(os, tr);
  if (!c.output_dir.empty()) emit(c, "trace.csv", os.str());
  std::cout << "termination=" << to_string(tr.termination) << "\n";
  std::cout << "points=" << tr.points.size() << "\n";
  std::cout << "lambda_last=" << csv::num(tr.points.back().lambda) << "\n";
  if (mp_bus) std::cout << "lambda_max_power=" << csv::num(find_max_power_point(tr, *mp_bus)) << "\n";
  return tr.termination == Termination::snbp_reached ? 0 : 2;
}

int cmd_lsvsi(const Globals& g, const std::string& input, std::optional<double> v0, double lambda,
              const std::vector<int>& buses) {
  ScenarioConfig c = base_config(g);
  std::vector<LocalMeasurement> ms;
  std::map<int, double> ref;
  if (!input.empty()) {
    ms = read_stream_file(input);
  } else {
    Case cs = load_case(c);
    const Direction dir = make_direction(c, cs);
    PFSolution s = solve_power_flow(cs, lambda, c.cpf.pf, nullptr, dir);
    if (!s.converged) throw ScenarioError("pf", "operating point did not converge");
    const auto& list = buses.empty() ? c.monitored_buses : buses;
    for (int b : list) {
      ms.push_back(extract_local(s, cs, b));
      if (!v0 && c.noload_from_solved) ref[b] = noload_voltage(cs, dir, b, c.cpf.pf);
    }
  }
  std::vector<LsVsiRow> rows;
  int failures = 0;
  for (const auto& m : ms) {
    const double r0 = v0 ? *v0 : (ref.count(m.bus) ? ref[m.bus] : 1.0);
    try {
      auto r = evaluate_ls_vsi(m, r0);
      rows.push_back({m.axis, m.bus, r.result.pi1_raw, r.result.pi1_norm, r.geometry.radius_p, r.geometry.radius_q,
                      r.geometry.center_distance});
    } catch (const Error& e) {
      ++failures;
      std::cerr << "bus " << m.bus << " at " << csv::num(m.axis) << ": " << e.what() << "\n";
    }
  }
  std::ostringstream os;
  write_lsvsi(os, rows);
  emit(c, "lsvsi.csv", os.str());
  return failures ? 3 : 0;
}

int cmd_baseline(const Globals& g, const std::string& input, const std::vector<std::string>& kinds,
                 std::optional<int> window, std::optional<double> v0) {
  ScenarioConfig c = base_config(g);
  c.indices = parse_kinds(kinds);
  if (window) c.lti_window = *window;
  std::ostringstream os;
  write_index_header(os);
  if (!input.empty()) {
    if (c.wants(IndexKind::cti)) throw ValidationError("cti needs the full network state; run it from a case or config");
    for (auto& [bus, ms] : by_bus(read_stream_file(input))) {
      BusSeries b = analyze_bus(bus, std::move(ms), {v0.value_or(1.0)}, c);
      for (const IndexSeries* s : {&b.lti, &b.dvsi, &b.nli}) write_index_rows(os, *s);
    }
  } else {
    std::string dir = c.output_dir;
    c.output_dir.clear();
    auto out = run_scenario(c);
    c.output_dir = dir;
    for (const auto& b : out.buses)
      for (const IndexSeries* s : {&b.lti, &b.cti, &b.dvsi, &b.nli}) write_index_rows(os, *s);
  }
  emit(c, "indices.csv", os.str());
  return 0;
}

int cmd_monitor(const Globals& g, const std::string& input, std::optional<int> window, std::optional<int> hysteresis,
                std::optional<double> threshold, std::optional<double> v0) {
  ScenarioConfig c = base_config(g);
  c.indices = {IndexKind::ls_vsi, IndexKind::ld_vsi};
  if (window) c.filter.window_samples = *window;
  if (hysteresis) c.hysteresis = *hysteresis;
  if (threshold) c.collapse_threshold = *threshold;
  if (c.filter.window_samples < 2) throw DomainError("filter window must be at least 2");
  std::vector<AlarmEvent> alarms;
  std::ostringstream idx;
  write_index_header(idx);
  if (!input.empty()) {
    for (auto& [bus, ms] : by_bus(read_stream_file(input))) {
      BusSeries b = analyze_bus(bus, std::move(ms), {v0.value_or(1.0)}, c);
      write_index_rows(idx, b.ld_vsi);
      alarms.insert(alarms.end(), b.alarms.begin(), b.alarms.end());
    }
  } else {
    std::string dir = c.output_dir;
    c.output_dir.clear();
    auto out = run_scenario(c);
    c.output_dir = dir;
    for (const auto& b : out.buses) {
      write_index_rows(idx, b.ld_vsi);
      alarms.insert(alarms.end(), b.alarms.begin(), b.alarms.end());
    }
  }
  std::ostringstream os;
  write_alarms(os, alarms);
  if (!c.output_dir.empty()) emit(c, "indices.csv", idx.str());
  emit(c, "alarms.csv", os.str());
  bool onset = false;
  for (const auto& a : alarms) onset = onset || a.kind == AlarmKind::onset;
  return onset ? 1 : 0;
}

int cmd_scenario(const Globals& g, std::optional<int> window) {
  ScenarioConfig c = base_config(g);
  if (window) c.lti_window = *window;
  auto out = run_scenario(c);
  if (c.output_dir.empty()) {
    std::cout << out.manifest.dump(2) << "\n";
  } else {
    std::cerr << "wrote " << out.files.size() + 1 << " files to " << c.output_dir << "\n";
  }
  for (const auto& b : out.buses)
    if (b.index_failures) std::cerr << "bus " << b.bus << ": " << b.index_failures << " samples without an index value\n";
  return 0;
}

int cmd_noise(const Globals& g, std::optional<int> trials) {
  ScenarioConfig c = base_config(g);
  auto rows = noise_study(c, trials.value_or(c.noise_study.trials));
  emit(c, "noise_study.csv", noise_table_csv(rows));
  return 0;
}

int cmd_plot(const std::string& input, const std::string& output, const std::string& x, const std::vector<std::string>& y,
             const std::vector<std::string>& where, const std::string& title) {
  std::vector<std::pair<std::string, std::string>> filter;
  for (const auto& w : where) {
    auto eq = w.find('=');
    if (eq == std::string::npos) throw ValidationError("--where expects column=value");
    filter.push_back({w.substr(0, eq), w.substr(eq + 1)});
  }
  const std::string svg = render_plot(read_file(input), x, y, filter, title);
  if (output.empty()) std::cout << svg;
  else write_file(output, svg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local voltage-stability monitoring toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--case", g.case_path, "MATPOWER-format case file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "master random seed");
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);

  std::string input, output, x, title;
  std::vector<std::string> ys, where, kinds{"lti", "cti", "dvsi", "nli"};
  std::vector<int> buses;
  double lambda = 0.0;
  bool q_limits = false, flat = false;
  std::optional<int> mp_bus, window, hysteresis, trials, filter_window;
  std::optional<double> max_step, v0, threshold;

  auto* pf = app.add_subcommand("pf", "solve one power flow");
  pf->add_option("--lambda", lambda, "loading parameter");
  pf->add_flag("--q-limits", q_limits, "enforce generator reactive limits");
  pf->add_flag("--flat", flat, "flat start");

  auto* cpf = app.add_subcommand("cpf", "trace the PV curve to the nose");
  cpf->add_option("--bus", mp_bus, "report the maximum-power point at this bus");
  cpf->add_option("--max-step", max_step, "largest continuation step");

  auto* ls = app.add_subcommand("lsvsi", "static index from a measurement stream or an operating point");
  ls->add_option("--input", input, "measurement stream CSV");
  ls->add_option("--v0", v0, "no-load voltage for normalization");
  ls->add_option("--lambda", lambda, "loading parameter when solving the case");
  ls->add_option("--bus", buses, "monitored buses when solving the case");

  auto* bl = app.add_subcommand("baseline", "comparison indices");
  bl->add_option("--input", input, "measurement stream CSV");
  bl->add_option("--kind", kinds, "lti, cti, dvsi, nli");
  bl->add_option("--window", window, "Thevenin least-squares window");
  bl->add_option("--v0", v0, "no-load voltage for the D-VSI reference (stream input)");

  auto* mon = app.add_subcommand("monitor", "dynamic index and alarms; exit 1 when an onset fires");
  mon->add_option("--input", input, "measurement stream CSV");
  mon->add_option("--window", filter_window, "filter window in samples");
  mon->add_option("--hysteresis", hysteresis, "consecutive negative samples before an onset");
  mon->add_option("--threshold", threshold, "collapse-proximity threshold");
  mon->add_option("--v0", v0, "no-load voltage for normalization (stream input)");

  auto* sc = app.add_subcommand("scenario", "run a full experiment and write its artifacts");
  sc->add_option("--window", window, "Thevenin least-squares window");

  auto* ns = app.add_subcommand("noise-study", "Monte-Carlo spread of each index");
  ns->add_option("--trials", trials, "trials per noise level")->check(CLI::Range(30, 1000000));

  auto* pl = app.add_subcommand("plot", "SVG line plot of CSV columns");
  pl->add_option("--input", input, "CSV file")->required()->check(CLI::ExistingFile);
  pl->add_option("--output", output, "SVG file (stdout when omitted)");
  pl->add_option("--x", x, "x column")->required();
  pl->add_option("--y", ys, "y columns")->required();
  pl->add_option("--where", where, "row filter column=value");
  pl->add_option("--title", title, "plot title");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*pf) return cmd_pf(g, lambda, q_limits, flat);
    if (*cpf) return cmd_cpf(g, mp_bus, max_step);
    if (*ls) return cmd_lsvsi(g, input, v0, lambda, buses);
    if (*bl) return cmd_baseline(g, input, kinds, window, v0);
    if (*mon) return cmd_monitor(g, input, filter_window, hysteresis, threshold, v0);
    if (*sc) return cmd_scenario(g, window);
    if (*ns) return cmd_noise(g, trials);
    if (*pl) return cmd_plot(input, output, x, ys, where, title);
  } catch (const ScenarioError& e) {
    std::cerr << "error in step " << e.step << ": " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
