#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "case_model.hpp"
#include "csv.hpp"
#include "power_flow.hpp"

namespace vstab {

enum class AxisKind { lambda, seconds };

inline const char* to_string(AxisKind k) { return k == AxisKind::lambda ? "lambda" : "seconds"; }

struct NeighborBranch {
  int bus = 0;
  cplx current;     // series-element current leaving the monitored bus
  cplx admittance;  // admittance-matrix entry Y(d,k); the branch impedance is -1/Y
};

struct LocalMeasurement {
  int bus = 0;
  double axis = 0.0;
  AxisKind axis_kind = AxisKind::lambda;
  cplx v_phasor;
  std::vector<NeighborBranch> neighbors;
  cplx local_shunt{0.0, 0.0};  // bus shunt plus sending-end pi shunts
  ZipCoeffs zip;
  double v_reference_pu = 1.0;

  // net complex power injected by the bus into the network
  cplx injection() const {
    cplx i = local_shunt * v_phasor;
    for (const auto& nb : neighbors) i += nb.current;
    return v_phasor * std::conj(i);
  }
  // load current drawn from the network at the bus
  cplx load_current() const {
    cplx i = local_shunt * v_phasor;
    for (const auto& nb : neighbors) i += nb.current;
    return -i;
  }
  cplx neighbor_voltage(std::size_t k) const {
    return v_phasor - neighbors[k].current * (-1.0 / neighbors[k].admittance);
  }
};

inline LocalMeasurement extract_local(const PFSolution& sol, const Case& c, int bus) {
  if (!c.has_bus(bus)) throw ValidationError("bus " + std::to_string(bus) + " not in case");
  if (!sol.converged) throw DomainError("measurement requires a converged solution");
  const std::size_t d = c.bus_index(bus);
  LocalMeasurement m;
  m.bus = bus;
  m.axis = sol.lambda;
  m.v_phasor = sol.v[d];
  m.local_shunt = c.buses[d].shunt_admittance;
  for (const auto& e : pi_elements(c)) {
    if (e.i != d && e.j != d) continue;
    const std::size_t k = e.i == d ? e.j : e.i;
    m.local_shunt += e.i == d ? e.shunt_i : e.shunt_j;
    m.neighbors.push_back({c.buses[k].id, -(sol.v[d] - sol.v[k]) * e.y_offdiag, e.y_offdiag});
  }
  if (const ZipLoad* l = c.load_at(bus)) {
    m.zip = l->coeffs;
    m.v_reference_pu = l->v_reference_pu;
  }
  return m;
}

struct NoiseModel {
  double sigma_v_mag = 0.0;    // p.u.
  double sigma_v_angle = 0.0;  // degrees
  std::optional<double> sigma_i_mag;
  std::optional<double> sigma_i_angle;
  std::uint64_t seed = 0;

  double i_mag() const { return sigma_i_mag.value_or(sigma_v_mag); }
  double i_angle() const { return sigma_i_angle.value_or(sigma_v_angle); }
};

inline cplx perturb_polar(cplx x, double sigma_mag, double sigma_angle_deg, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const double dm = n01(rng) * sigma_mag;
  const double da = n01(rng) * sigma_angle_deg * std::numbers::pi / 180.0;
  if (dm == 0.0 && da == 0.0) return x;  // polar round trip would not be exact
  return std::polar(std::abs(x) + dm, std::arg(x) + da);
}

inline LocalMeasurement add_noise(LocalMeasurement m, const NoiseModel& noise, std::mt19937_64& rng) {
  m.v_phasor = perturb_polar(m.v_phasor, noise.sigma_v_mag, noise.sigma_v_angle, rng);
  for (auto& nb : m.neighbors) nb.current = perturb_polar(nb.current, noise.i_mag(), noise.i_angle(), rng);
  return m;
}

inline LocalMeasurement add_noise(const LocalMeasurement& m, const NoiseModel& noise) {
  std::mt19937_64 rng(noise.seed);
  return add_noise(m, noise, rng);
}

namespace detail {

using GroupKey = std::pair<int, int>;  // neighbor id, occurrence among parallel branches

inline std::vector<GroupKey> group_keys(const LocalMeasurement& m) {
  std::vector<GroupKey> keys;
  std::map<int, int> seen;
  for (const auto& nb : m.neighbors) keys.push_back({nb.bus, seen[nb.bus]++});
  return keys;
}

}  // namespace detail

inline void write_stream(std::ostream& os, const std::vector<LocalMeasurement>& ms) {
  std::vector<detail::GroupKey> groups;
  for (const auto& m : ms)
    for (const auto& k : detail::group_keys(m))
      if (std::find(groups.begin(), groups.end(), k) == groups.end()) groups.push_back(k);
  os << "axis,axis_kind,bus,v_re,v_im,";
  for (const auto& g : groups) {
    const std::string p = "nbr_" + std::to_string(g.first) + "_";
    os << p << "i_re," << p << "i_im," << p << "y_re," << p << "y_im,";
  }
  os << "shunt_g,shunt_b,ap,bp,gp,aq,bq,gq\n";
  using csv::num;
  for (const auto& m : ms) {
    os << num(m.axis) << ',' << to_string(m.axis_kind) << ',' << m.bus << ',' << num(m.v_phasor.real()) << ','
       << num(m.v_phasor.imag()) << ',';
    auto keys = detail::group_keys(m);
    for (const auto& g : groups) {
      auto it = std::find(keys.begin(), keys.end(), g);
      if (it == keys.end()) {
        os << ",,,,";
        continue;
      }
      const auto& nb = m.neighbors[static_cast<std::size_t>(it - keys.begin())];
      os << num(nb.current.real()) << ',' << num(nb.current.imag()) << ',' << num(nb.admittance.real()) << ','
         << num(nb.admittance.imag()) << ',';
    }
    auto z = m.zip.as_array();
    os << num(m.local_shunt.real()) << ',' << num(m.local_shunt.imag());
    for (double v : z) os << ',' << num(v);
    os << '\n';
  }
}

inline std::vector<LocalMeasurement> read_stream(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "missing header");
  auto head = csv::split(line);
  static const std::vector<std::string> lead{"axis", "axis_kind", "bus", "v_re", "v_im"};
  static const std::vector<std::string> tail{"shunt_g", "shunt_b", "ap", "bp", "gp", "aq", "bq", "gq"};
  if (head.size() < lead.size() + tail.size() || (head.size() - lead.size() - tail.size()) % 4 != 0)
    throw ParseError(1, "bad header column count");
  for (std::size_t i = 0; i < lead.size(); ++i)
    if (head[i] != lead[i]) throw ParseError(1, "expected column '" + lead[i] + "'");
  for (std::size_t i = 0; i < tail.size(); ++i)
    if (head[head.size() - tail.size() + i] != tail[i]) throw ParseError(1, "expected column '" + tail[i] + "'");
  const std::size_t ngroups = (head.size() - lead.size() - tail.size()) / 4;
  std::vector<int> group_bus(ngroups);
  static const char* suffix[4] = {"_i_re", "_i_im", "_y_re", "_y_im"};
  for (std::size_t g = 0; g < ngroups; ++g) {
    const std::string& first = head[lead.size() + 4 * g];
    if (first.rfind("nbr_", 0) != 0) throw ParseError(1, "bad neighbor column '" + first + "'");
    auto us = first.find('_', 4);
    if (us == std::string::npos) throw ParseError(1, "bad neighbor column '" + first + "'");
    group_bus[g] = csv::to_int(first.substr(4, us - 4), 1);
    for (int s = 0; s < 4; ++s)
      if (head[lead.size() + 4 * g + static_cast<std::size_t>(s)] != "nbr_" + std::to_string(group_bus[g]) + suffix[s])
        throw ParseError(1, "bad neighbor column group for bus " + std::to_string(group_bus[g]));
  }

  std::vector<LocalMeasurement> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split(line);
    if (f.size() != head.size()) throw ParseError(line_no, "expected " + std::to_string(head.size()) + " fields");
    LocalMeasurement m;
    m.axis = csv::to_double(f[0], line_no);
    if (f[1] == "lambda") m.axis_kind = AxisKind::lambda;
    else if (f[1] == "seconds") m.axis_kind = AxisKind::seconds;
    else throw ParseError(line_no, "axis_kind must be lambda or seconds");
    m.bus = csv::to_int(f[2], line_no);
    m.v_phasor = {csv::to_double(f[3], line_no), csv::to_double(f[4], line_no)};
    for (std::size_t g = 0; g < ngroups; ++g) {
      const std::size_t b = lead.size() + 4 * g;
      int empty = 0;
      for (int s = 0; s < 4; ++s) empty += f[b + static_cast<std::size_t>(s)].empty();
      if (empty == 4) continue;
      if (empty != 0) throw ParseError(line_no, "partially filled neighbor group");
      m.neighbors.push_back({group_bus[g], {csv::to_double(f[b], line_no), csv::to_double(f[b + 1], line_no)},
                             {csv::to_double(f[b + 2], line_no), csv::to_double(f[b + 3], line_no)}});
    }
    const std::size_t t = head.size() - tail.size();
    m.local_shunt = {csv::to_double(f[t], line_no), csv::to_double(f[t + 1], line_no)};
    std::array<double, 6> z{};
    for (std::size_t k = 0; k < 6; ++k) z[k] = csv::to_double(f[t + 2 + k], line_no);
    m.zip = ZipCoeffs::from_array(z);
    if (std::abs(m.v_phasor) == 0.0) throw ParseError(line_no, "zero voltage phasor");
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace vstab
