#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Sparse>

#include "errors.hpp"

namespace vstab {

using cplx = std::complex<double>;

enum class BusKind { slack, pv, pq };
enum class BranchStatus { in_service, outaged };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::pq;
  double base_voltage_kv = 0.0;
  double v_setpoint_pu = 1.0;  // used for slack / pv
  cplx shunt_admittance{0.0, 0.0};
};

struct Branch {
  int id = 0;  // 1-based row order in the case file, shared with LTC rows
  int from_bus = 0;
  int to_bus = 0;
  cplx series_impedance{0.0, 0.0};
  double charging_susceptance = 0.0;
  BranchStatus status = BranchStatus::in_service;

  bool in_service() const { return status == BranchStatus::in_service; }
};

// to_bus is the tap side
struct LTCBranch : Branch {
  double tap_ratio = 1.0;
  cplx short_circuit_admittance() const { return 1.0 / series_impedance; }
};

struct ZipCoeffs {
  double alpha_p = 0.0, beta_p = 0.0, gamma_p = 1.0;
  double alpha_q = 0.0, beta_q = 0.0, gamma_q = 1.0;

  std::array<double, 6> as_array() const {
    return {alpha_p, beta_p, gamma_p, alpha_q, beta_q, gamma_q};
  }
  static ZipCoeffs from_array(const std::array<double, 6>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
  }
};

struct ZipLoad {
  int bus = 0;
  double p_nominal = 0.0;
  double q_nominal = 0.0;
  ZipCoeffs coeffs;
  double v_reference_pu = 1.0;
};

struct Generator {
  int bus = 0;
  double p_injection = 0.0;
  double q_min = -1e10;
  double q_max = 1e10;
  double v_setpoint_pu = 1.0;
  bool in_service = true;
};

struct Case {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<LTCBranch> ltc_branches;
  std::vector<ZipLoad> zip_loads;
  std::vector<Generator> generators;
  std::unordered_map<int, std::size_t> index;

  void reindex() {
    index.clear();
    for (std::size_t i = 0; i < buses.size(); ++i) index[buses[i].id] = i;
  }

  std::size_t n() const { return buses.size(); }

  bool has_bus(int id) const {
    if (index.size() == buses.size()) return index.count(id) > 0;
    return std::any_of(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == id; });
  }

  std::size_t bus_index(int id) const {
    if (index.size() == buses.size()) {
      auto it = index.find(id);
      if (it != index.end()) return it->second;
    } else {
      for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].id == id) return i;
    }
    throw ValidationError("unknown bus " + std::to_string(id));
  }

  std::size_t branch_count() const { return branches.size() + ltc_branches.size(); }

  Branch* find_branch(int id) {
    for (auto& b : branches)
      if (b.id == id) return &b;
    for (auto& b : ltc_branches)
      if (b.id == id) return &b;
    return nullptr;
  }
  const Branch* find_branch(int id) const { return const_cast<Case*>(this)->find_branch(id); }

  const ZipLoad* load_at(int bus) const {
    for (auto& l : zip_loads)
      if (l.bus == bus) return &l;
    return nullptr;
  }

  std::size_t slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].kind == BusKind::slack) return i;
    throw ValidationError("no slack bus");
  }

  // pv buses without an in-service generator behave as pq
  bool regulated(std::size_t i) const {
    const Bus& b = buses[i];
    if (b.kind == BusKind::slack) return true;
    if (b.kind != BusKind::pv) return false;
    return std::any_of(generators.begin(), generators.end(),
                       [&](const Generator& g) { return g.in_service && g.bus == b.id; });
  }
};

struct PiEquivalent {
  cplx shunt_non_tap;
  cplx shunt_tap;
  cplx series;
};

inline PiEquivalent ltc_pi_equivalent(const LTCBranch& ltc) {
  const double a = ltc.tap_ratio;
  if (!(a > 0.0)) throw DomainError("tap ratio must be positive");
  if (std::abs(ltc.series_impedance) == 0.0) throw SingularError("zero impedance branch");
  const cplx y = ltc.short_circuit_admittance();
  return {y * (a - 1.0) / a, y * (1.0 - a) / (a * a), y / a};
}

// one in-service two-port as seen by the bus admittance matrix
struct PiElement {
  int branch_id;
  std::size_t i, j;  // bus indices; for LTCs i is the non-tap side
  cplx y_offdiag;    // Ybus(i,j) contribution, equals -series admittance
  cplx shunt_i, shunt_j;
};

inline std::vector<PiElement> pi_elements(const Case& c) {
  std::vector<PiElement> out;
  out.reserve(c.branch_count());
  for (const auto& b : c.branches) {
    if (!b.in_service()) continue;
    if (std::abs(b.series_impedance) == 0.0)
      throw SingularError("zero impedance on branch " + std::to_string(b.id));
    const cplx y = 1.0 / b.series_impedance;
    const cplx ch{0.0, b.charging_susceptance / 2.0};
    out.push_back({b.id, c.bus_index(b.from_bus), c.bus_index(b.to_bus), -y, ch, ch});
  }
  for (const auto& b : c.ltc_branches) {
    if (!b.in_service()) continue;
    const PiEquivalent pi = ltc_pi_equivalent(b);
    const cplx ch{0.0, b.charging_susceptance / 2.0};
    out.push_back({b.id, c.bus_index(b.from_bus), c.bus_index(b.to_bus), -pi.series,
                   pi.shunt_non_tap + ch, pi.shunt_tap + ch});
  }
  std::sort(out.begin(), out.end(),
            [](const PiElement& a, const PiElement& b) { return a.branch_id < b.branch_id; });
  return out;
}

struct AdmittanceMatrix {
  Eigen::SparseMatrix<cplx> y;

  std::size_t dimension() const { return static_cast<std::size_t>(y.rows()); }
  cplx at(std::size_t i, std::size_t j) const {
    return y.coeff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
};

inline AdmittanceMatrix build_admittance(const Case& c) {
  const auto n = static_cast<Eigen::Index>(c.n());
  std::vector<Eigen::Triplet<cplx>> t;
  for (const auto& e : pi_elements(c)) {
    const auto i = static_cast<Eigen::Index>(e.i), j = static_cast<Eigen::Index>(e.j);
    t.emplace_back(i, j, e.y_offdiag);
    t.emplace_back(j, i, e.y_offdiag);
    t.emplace_back(i, i, -e.y_offdiag + e.shunt_i);
    t.emplace_back(j, j, -e.y_offdiag + e.shunt_j);
  }
  for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(i, i, c.buses[static_cast<std::size_t>(i)].shunt_admittance);
  AdmittanceMatrix m;
  m.y.resize(n, n);
  m.y.setFromTriplets(t.begin(), t.end());
  m.y.makeCompressed();
  return m;
}

inline void check_zip(const ZipCoeffs& z, const std::string& where) {
  for (double v : z.as_array())
    if (v < 0.0 || !std::isfinite(v)) throw ValidationError(where + ": negative ZIP coefficient");
  if (std::abs(z.alpha_p + z.beta_p + z.gamma_p - 1.0) > 1e-9 ||
      std::abs(z.alpha_q + z.beta_q + z.gamma_q - 1.0) > 1e-9)
    throw ValidationError(where + ": ZIP coefficients must sum to 1");
}

inline void validate_case(Case& c) {
  c.reindex();
  if (c.index.size() != c.buses.size()) throw ValidationError("duplicate bus ids");
  int slacks = 0;
  for (const auto& b : c.buses) {
    if (b.kind == BusKind::slack) ++slacks;
    if (b.kind != BusKind::pq && !(b.v_setpoint_pu > 0.0))
      throw ValidationError("bus " + std::to_string(b.id) + ": voltage setpoint must be positive");
  }
  if (slacks == 0) throw ValidationError("no slack bus");
  if (slacks > 1) throw ValidationError("more than one slack bus");

  std::vector<int> ids;
  auto check_branch = [&](const Branch& b) {
    ids.push_back(b.id);
    if (!c.has_bus(b.from_bus) || !c.has_bus(b.to_bus))
      throw ValidationError("branch " + std::to_string(b.id) + " references unknown bus");
    if (b.from_bus == b.to_bus) throw ValidationError("branch " + std::to_string(b.id) + " is a self loop");
    if (std::abs(b.series_impedance) == 0.0)
      throw ValidationError("branch " + std::to_string(b.id) + " has zero impedance");
  };
  for (const auto& b : c.branches) check_branch(b);
  for (const auto& b : c.ltc_branches) {
    check_branch(b);
    if (!(b.tap_ratio > 0.0)) throw ValidationError("branch " + std::to_string(b.id) + ": tap ratio must be positive");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate branch ids");

  for (const auto& l : c.zip_loads) {
    if (!c.has_bus(l.bus)) throw ValidationError("ZIP load at unknown bus " + std::to_string(l.bus));
    check_zip(l.coeffs, "bus " + std::to_string(l.bus));
    if (!(l.v_reference_pu > 0.0)) throw ValidationError("ZIP reference voltage must be positive");
  }
  for (const auto& g : c.generators)
    if (!c.has_bus(g.bus)) throw ValidationError("generator at unknown bus " + std::to_string(g.bus));

  // connectivity over in-service branches
  std::vector<std::vector<std::size_t>> adj(c.n());
  auto link = [&](const Branch& b) {
    if (!b.in_service()) return;
    auto i = c.bus_index(b.from_bus), j = c.bus_index(b.to_bus);
    adj[i].push_back(j);
    adj[j].push_back(i);
  };
  for (const auto& b : c.branches) link(b);
  for (const auto& b : c.ltc_branches) link(b);
  if (c.n() == 0) throw ValidationError("case has no buses");
  std::vector<char> seen(c.n(), 0);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  if (count != c.n()) throw ValidationError("network graph is disconnected");
}

namespace detail {

struct Matrix {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;
  std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\'') quoted = !quoted;
    if (s[i] == '%' && !quoted) return std::string(s.substr(0, i));
  }
  return std::string(s);
}

inline double parse_number(std::string_view tok, std::size_t line) {
  std::string t(tok);
  if (t == "Inf" || t == "inf" || t == "+Inf") return HUGE_VAL;
  if (t == "-Inf" || t == "-inf") return -HUGE_VAL;
  const char* b = t.data();
  if (!t.empty() && t[0] == '+') ++b;
  double v = 0.0;
  auto [p, ec] = std::from_chars(b, t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw ParseError(line, "bad numeric token '" + t + "'");
  return v;
}

// splits matrix body text on ';' and newlines into numeric rows
inline void append_rows(Matrix& m, std::string_view body, std::size_t line) {
  std::vector<double> row;
  std::string tok;
  auto flush_tok = [&] {
    if (!tok.empty()) {
      row.push_back(parse_number(tok, line));
      tok.clear();
    }
  };
  auto flush_row = [&] {
    flush_tok();
    if (!row.empty()) {
      m.rows.push_back(std::move(row));
      m.lines.push_back(line);
      row.clear();
    }
  };
  for (char ch : body) {
    if (ch == ';') flush_row();
    else if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) flush_tok();
    else tok.push_back(ch);
  }
  flush_row();
}

}  // namespace detail

inline void set_zip_default(Case& c, const ZipCoeffs& z) {
  check_zip(z, "default");
  for (auto& l : c.zip_loads) l.coeffs = z;
}

inline void set_zip(Case& c, int bus, const ZipCoeffs& z) {
  check_zip(z, "bus " + std::to_string(bus));
  for (auto& l : c.zip_loads)
    if (l.bus == bus) {
      l.coeffs = z;
      return;
    }
  if (!c.has_bus(bus)) throw ValidationError("ZIP load at unknown bus " + std::to_string(bus));
  c.zip_loads.push_back({bus, 0.0, 0.0, z, 1.0});
}

// MATPOWER-compatible subset plus the `mpc.zip` / `mpc.zip_default` sidecar blocks
inline Case parse_case(std::string_view text) {
  std::map<std::string, detail::Matrix> mats;
  std::optional<double> base;
  std::string name;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  detail::Matrix* open = nullptr;
  char closer = 0;
  std::size_t open_line = 0;
  bool skipping = false;

  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    std::string line = detail::strip_comment(raw);
    std::string_view s = detail::trim(line);

    if (open || skipping) {
      auto end = s.find(closer);
      std::string_view body = end == std::string_view::npos ? s : s.substr(0, end);
      if (open) detail::append_rows(*open, body, line_no);
      if (end != std::string_view::npos) {
        open = nullptr;
        skipping = false;
      }
      if (pos > text.size()) break;
      continue;
    }
    if (s.empty()) {
      if (pos > text.size()) break;
      continue;
    }
    if (s.rfind("function", 0) == 0) {
      auto eq = s.find('=');
      name = std::string(detail::trim(eq == std::string_view::npos ? s.substr(8) : s.substr(eq + 1)));
      continue;
    }
    if (s == "end" || s == "end;") continue;
    if (s.rfind("mpc.", 0) != 0) throw ParseError(line_no, "unrecognized statement");
    auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected '='");
    std::string key(detail::trim(s.substr(4, eq - 4)));
    std::string_view rhs = detail::trim(s.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "missing field name");
    if (rhs.empty()) throw ParseError(line_no, "missing value");

    if (rhs.front() == '[') {
      auto& m = mats[key];
      m = detail::Matrix{};
      m.line = line_no;
      open_line = line_no;
      rhs.remove_prefix(1);
      auto end = rhs.find(']');
      if (end == std::string_view::npos) {
        detail::append_rows(m, rhs, line_no);
        open = &m;
        closer = ']';
      } else {
        detail::append_rows(m, rhs.substr(0, end), line_no);
      }
    } else if (rhs.front() == '{') {
      if (rhs.find('}') == std::string_view::npos) {
        skipping = true;
        closer = '}';
        open_line = line_no;
      }
    } else if (rhs.front() == '\'') {
      // string-valued field (version, names)
    } else {
      std::string_view v = rhs;
      if (!v.empty() && v.back() == ';') v.remove_suffix(1);
      v = detail::trim(v);
      double val = detail::parse_number(v, line_no);
      if (key == "baseMVA") base = val;
    }
    if (pos > text.size()) break;
  }
  if (open || skipping) throw ParseError(open_line, "unterminated matrix");

  auto need = [&](const std::string& k) -> const detail::Matrix& {
    auto it = mats.find(k);
    if (it == mats.end()) throw ParseError(line_no, "missing mpc." + k + " block");
    return it->second;
  };
  if (!base) throw ParseError(line_no, "missing mpc.baseMVA");
  if (!(*base > 0.0)) throw ValidationError("baseMVA must be positive");

  Case c;
  c.name = name.empty() ? "case" : name;
  c.base_mva = *base;
  const double mva = *base;

  const auto& bus = need("bus");
  for (std::size_t r = 0; r < bus.rows.size(); ++r) {
    const auto& row = bus.rows[r];
    if (row.size() < 9) throw ParseError(bus.lines[r], "bus row needs at least 9 columns");
    Bus b;
    b.id = static_cast<int>(row[0]);
    if (static_cast<double>(b.id) != row[0]) throw ParseError(bus.lines[r], "non-integer bus id");
    switch (static_cast<int>(row[1])) {
      case 1: b.kind = BusKind::pq; break;
      case 2: b.kind = BusKind::pv; break;
      case 3: b.kind = BusKind::slack; break;
      default: throw ParseError(bus.lines[r], "unsupported bus type");
    }
    b.shunt_admittance = cplx(row[4], row[5]) / mva;
    b.v_setpoint_pu = row[7];
    b.base_voltage_kv = row.size() > 9 ? row[9] : 0.0;
    c.buses.push_back(b);
    if (row[2] != 0.0 || row[3] != 0.0) c.zip_loads.push_back({b.id, row[2] / mva, row[3] / mva, {}, 1.0});
  }
  c.reindex();

  if (mats.count("gen")) {
    const auto& gen = mats.at("gen");
    for (std::size_t r = 0; r < gen.rows.size(); ++r) {
      const auto& row = gen.rows[r];
      if (row.size() < 6) throw ParseError(gen.lines[r], "gen row needs at least 6 columns");
      Generator g;
      g.bus = static_cast<int>(row[0]);
      g.p_injection = row[1] / mva;
      g.q_max = row[3] / mva;
      g.q_min = row[4] / mva;
      g.v_setpoint_pu = row[5];
      g.in_service = row.size() > 7 ? row[7] > 0.0 : true;
      c.generators.push_back(g);
    }
  }
  // regulated buses take the setpoint of their first in-service generator
  for (auto& b : c.buses) {
    if (b.kind == BusKind::pq) continue;
    for (const auto& g : c.generators)
      if (g.bus == b.id && g.in_service) {
        b.v_setpoint_pu = g.v_setpoint_pu;
        break;
      }
  }

  const auto& br = need("branch");
  for (std::size_t r = 0; r < br.rows.size(); ++r) {
    const auto& row = br.rows[r];
    if (row.size() < 5) throw ParseError(br.lines[r], "branch row needs at least 5 columns");
    const double tap = row.size() > 8 ? row[8] : 0.0;
    const double shift = row.size() > 9 ? row[9] : 0.0;
    if (shift != 0.0) throw ValidationError("phase shifting transformers are not supported (branch " + std::to_string(r + 1) + ")");
    Branch b;
    b.id = static_cast<int>(r + 1);
    b.from_bus = static_cast<int>(row[0]);
    b.to_bus = static_cast<int>(row[1]);
    b.series_impedance = cplx(row[2], row[3]);
    b.charging_susceptance = row[4];
    b.status = (row.size() > 10 && row[10] <= 0.0) ? BranchStatus::outaged : BranchStatus::in_service;
    if (tap == 0.0) {
      c.branches.push_back(b);
    } else {
      LTCBranch l;
      static_cast<Branch&>(l) = b;
      // the case format taps the from end; here the tap side is to_bus
      std::swap(l.from_bus, l.to_bus);
      l.tap_ratio = tap;
      c.ltc_branches.push_back(l);
    }
  }

  if (mats.count("zip_default")) {
    const auto& zd = mats.at("zip_default");
    if (zd.rows.size() != 1 || zd.rows[0].size() != 6) throw ParseError(zd.line, "zip_default needs 6 values");
    std::array<double, 6> a{};
    std::copy(zd.rows[0].begin(), zd.rows[0].end(), a.begin());
    auto z = ZipCoeffs::from_array(a);
    check_zip(z, "zip_default");
    for (auto& l : c.zip_loads) l.coeffs = z;
  }
  if (mats.count("zip")) {
    const auto& zm = mats.at("zip");
    for (std::size_t r = 0; r < zm.rows.size(); ++r) {
      const auto& row = zm.rows[r];
      if (row.size() < 7) throw ParseError(zm.lines[r], "zip row needs bus + 6 coefficients");
      std::array<double, 6> a{};
      std::copy(row.begin() + 1, row.begin() + 7, a.begin());
      int busid = static_cast<int>(row[0]);
      if (!c.has_bus(busid)) throw ValidationError("ZIP load at unknown bus " + std::to_string(busid));
      set_zip(c, busid, ZipCoeffs::from_array(a));
      if (row.size() > 7)
        for (auto& l : c.zip_loads)
          if (l.bus == busid) l.v_reference_pu = row[7];
    }
  }

  validate_case(c);
  return c;
}

// topology edits used by events; all return a new Case
inline Case with_branch_outage(Case c, int branch_id) {
  Branch* b = c.find_branch(branch_id);
  if (!b) throw ValidationError("unknown branch " + std::to_string(branch_id));
  b->status = BranchStatus::outaged;
  return c;
}

inline Case without_branch(Case c, int branch_id) {
  auto drop = [&](auto& v) {
    v.erase(std::remove_if(v.begin(), v.end(), [&](const auto& b) { return b.id == branch_id; }), v.end());
  };
  drop(c.branches);
  drop(c.ltc_branches);
  return c;
}

inline Case with_generator_outage(Case c, int bus_id) {
  bool hit = false;
  for (auto& g : c.generators)
    if (g.bus == bus_id && g.in_service) {
      g.in_service = false;
      hit = true;
    }
  if (!hit) throw ValidationError("no in-service generator at bus " + std::to_string(bus_id));
  return c;
}

inline Case with_shunt_switch(Case c, int bus_id, double delta_b) {
  c.buses[c.bus_index(bus_id)].shunt_admittance += cplx(0.0, delta_b);
  return c;
}

}  // namespace vstab
