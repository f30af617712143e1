#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "measurements.hpp"

namespace vstab {

struct HParams {
  double h1 = 0.0, h2 = 0.0, h3 = 0.0, h4 = 0.0;
  double p_rhs = 0.0, q_rhs = 0.0;
};

struct CircleGeometry {
  std::array<double, 2> center_p{}, center_q{};
  double radius_p = 0.0, radius_q = 0.0;
  double center_distance = 0.0;
  double beta12 = 0.0;
};

struct VSIResult {
  double pi1_raw = 0.0;
  double pi1_norm = 0.0;
  double noload_reference = 0.0;
};

namespace detail {

inline double admittance_scale(const LocalMeasurement& m) {
  double s = std::abs(m.local_shunt);
  for (const auto& nb : m.neighbors) s += std::abs(nb.admittance);
  return std::max(s, 1.0);
}

inline void check_well_posed(const HParams& h, double scale) {
  const double eps = 1e-8 * scale;
  if (std::abs(h.h1) <= eps || std::abs(h.h4) <= eps)
    throw IllPosedBusError("h1 or h4 is numerically zero at the monitored bus");
}

// neighbor-voltage sums weighted by the branch admittance entries
inline void weighted_sums(const LocalMeasurement& m, const std::vector<cplx>& vk, double& h2, double& h3) {
  h2 = h3 = 0.0;
  for (std::size_t k = 0; k < m.neighbors.size(); ++k) {
    const double g = m.neighbors[k].admittance.real(), b = m.neighbors[k].admittance.imag();
    h2 += vk[k].real() * g - vk[k].imag() * b;
    h3 += vk[k].real() * b + vk[k].imag() * g;
  }
}

}  // namespace detail

// measured load back-solved from net injection (injection-signed: negative when consuming)
inline std::pair<double, double> backsolve_load(const LocalMeasurement& m) {
  const cplx s = m.injection();
  const double v = std::abs(m.v_phasor) / m.v_reference_pu;
  const auto& z = m.zip;
  const double dp = z.alpha_p * v * v + z.beta_p * v + z.gamma_p;
  const double dq = z.alpha_q * v * v + z.beta_q * v + z.gamma_q;
  auto guard = [](double d) { return std::abs(d) < 1e-9 ? (d < 0 ? -1e-9 : 1e-9) : d; };
  return {s.real() / guard(dp), s.imag() / guard(dq)};
}

inline HParams compute_h_params(const LocalMeasurement& m) {
  if (m.zip.beta_p != 0.0 || m.zip.beta_q != 0.0)
    throw DegenerateLoadError("constant-current ZIP component is a degenerate condition");
  std::vector<cplx> vk(m.neighbors.size());
  double sg = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < m.neighbors.size(); ++k) {
    vk[k] = m.neighbor_voltage(k);
    sg += m.neighbors[k].admittance.real();
    sb += m.neighbors[k].admittance.imag();
  }
  auto [pl, ql] = backsolve_load(m);
  const double vr2 = m.v_reference_pu * m.v_reference_pu;
  HParams h;
  h.h1 = -sg + m.local_shunt.real() - pl * m.zip.alpha_p / vr2;
  h.h4 = sb - m.local_shunt.imag() - ql * m.zip.alpha_q / vr2;
  detail::weighted_sums(m, vk, h.h2, h.h3);
  h.p_rhs = pl * m.zip.gamma_p;
  h.q_rhs = ql * m.zip.gamma_q;
  detail::check_well_posed(h, detail::admittance_scale(m));
  return h;
}

// constant-power parameters built from neighbor voltages and net injection, no shunts
inline HParams t_params(const LocalMeasurement& m, const std::vector<cplx>& neighbor_voltages, double p, double q) {
  HParams t;
  for (const auto& nb : m.neighbors) {
    t.h1 -= nb.admittance.real();
    t.h4 += nb.admittance.imag();
  }
  detail::weighted_sums(m, neighbor_voltages, t.h2, t.h3);
  t.p_rhs = p;
  t.q_rhs = q;
  detail::check_well_posed(t, detail::admittance_scale(m));
  return t;
}

inline CircleGeometry circle_geometry(const HParams& h) {
  if (h.h1 == 0.0 || h.h4 == 0.0) throw IllPosedBusError("h1 or h4 is zero");
  const double a = h.h2 * h.h2 + h.h3 * h.h3;
  const double r1 = h.p_rhs / h.h1 + a / (4.0 * h.h1 * h.h1);
  const double r2 = h.q_rhs / h.h4 + a / (4.0 * h.h4 * h.h4);
  if (r1 < 0.0 || r2 < 0.0) throw InfeasibleCircleError("imaginary power-flow circle radius");
  CircleGeometry g;
  g.center_p = {-h.h2 / (2.0 * h.h1), -h.h3 / (2.0 * h.h1)};
  g.center_q = {h.h3 / (2.0 * h.h4), -h.h2 / (2.0 * h.h4)};
  g.radius_p = std::sqrt(r1);
  g.radius_q = std::sqrt(r2);
  const double dx = g.center_p[0] - g.center_q[0], dy = g.center_p[1] - g.center_q[1];
  const double d2 = dx * dx + dy * dy;
  g.center_distance = std::sqrt(d2);
  g.beta12 = (d2 - r1 - r2) / 2.0;
  return g;
}

inline double pi1_raw(const CircleGeometry& g) {
  const double r1 = g.radius_p * g.radius_p, r2 = g.radius_q * g.radius_q;
  return r1 * r2 - g.beta12 * g.beta12;
}

// family-of-circles determinant form of the same quantity
inline double pi1_determinant(const CircleGeometry& g) {
  const double dp = -g.radius_p * g.radius_p, dq = -g.radius_q * g.radius_q;
  return dp * dq - g.beta12 * g.beta12;
}

// the printed expanded inequality, with p, q read as the right-hand sides; sign cross-check only
inline double pi1_expanded(const HParams& h) {
  const double a = h.h2 * h.h2 + h.h3 * h.h3;
  const double h1 = h.h1, h4 = h.h4;
  const double u = h.h2 / (2 * h1) + h.h3 / (2 * h4), w = h.h3 / (2 * h1) - h.h2 / (2 * h4);
  return a / (8 * h1 * h1) + a / (8 * h4 * h4) + 0.5 * h.p_rhs / h1 + 0.5 * h.q_rhs / h4 +
         (a / (4 * h1 * h1) + h.p_rhs / h1) * (a / (4 * h4 * h4) + h.q_rhs / h4) - 0.5 * u * u - 0.5 * w * w;
}

inline VSIResult ls_vsi(const CircleGeometry& g, double noload_reference) {
  if (!(noload_reference > 0.0)) throw NormalizationError("no-load reference must be positive");
  VSIResult r;
  r.pi1_raw = pi1_raw(g);
  r.noload_reference = noload_reference;
  r.pi1_norm = r.pi1_raw / noload_reference;
  return r;
}

// Pi1 with zero injection and every phasor at v0 (angle 0); v0 = 1 is the plain unit template
inline double noload_reference(const LocalMeasurement& tmpl, double v0 = 1.0) {
  if (!(v0 > 0.0)) throw DomainError("no-load voltage must be positive");
  double sg = 0.0, sb = 0.0;
  for (const auto& nb : tmpl.neighbors) {
    sg += nb.admittance.real();
    sb += nb.admittance.imag();
  }
  HParams h;
  h.h1 = -sg + tmpl.local_shunt.real();
  h.h4 = sb - tmpl.local_shunt.imag();
  h.h2 = v0 * sg;
  h.h3 = v0 * sb;
  detail::check_well_posed(h, detail::admittance_scale(tmpl));
  const double ref = pi1_raw(circle_geometry(h));
  if (!(ref > 0.0)) throw IllPosedBusError("non-positive no-load reference");
  return ref;
}

struct BusIndex {
  HParams h;
  CircleGeometry geometry;
  VSIResult result;
};

inline BusIndex evaluate_ls_vsi(const LocalMeasurement& m, double v0 = 1.0) {
  BusIndex b;
  b.h = compute_h_params(m);
  b.geometry = circle_geometry(b.h);
  b.result = ls_vsi(b.geometry, noload_reference(m, v0));
  return b;
}

// residuals of the monitored voltage against both circles
inline std::array<double, 2> circle_residuals(const CircleGeometry& g, cplx v) {
  const double d1 = std::hypot(v.real() - g.center_p[0], v.imag() - g.center_p[1]);
  const double d2 = std::hypot(v.real() - g.center_q[0], v.imag() - g.center_q[1]);
  return {d1 - g.radius_p, d2 - g.radius_q};
}

}  // namespace vstab
