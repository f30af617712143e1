#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "lsvsi.hpp"
#include "monitor.hpp"
#include "power_flow.hpp"

namespace vstab {

struct TheveninEstimate {
  cplx e_th;
  cplx z_th;
  int window_size = 0;
  double conditioning = 0.0;
};

struct TheveninIndex {
  TheveninEstimate estimate;
  double value = 0.0;
};

inline double impedance_ratio_index(cplx z_th, cplx v, cplx i_load) {
  const double z_app = std::abs(v / i_load);
  return std::clamp(1.0 - std::abs(z_th) / z_app, 0.0, 1.0);
}

// least-squares fit of V = E - Z I over (voltage, load current) snapshots
inline TheveninIndex lti(const std::vector<std::pair<cplx, cplx>>& window) {
  if (window.size() < 2) throw ConditioningError("LTI needs at least two snapshots");
  const auto n = static_cast<Eigen::Index>(window.size());
  Eigen::MatrixXcd a(n, 2);
  Eigen::VectorXcd b(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    a(k, 0) = 1.0;
    a(k, 1) = -window[static_cast<std::size_t>(k)].second;
    b[k] = window[static_cast<std::size_t>(k)].first;
  }
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (!(s[1] > 1e-12 * s[0])) throw ConditioningError("rank-deficient Thevenin window");
  Eigen::VectorXcd x = svd.solve(b);
  TheveninIndex r;
  r.estimate = {x[0], x[1], static_cast<int>(window.size()), s[0] / s[1]};
  r.value = impedance_ratio_index(x[1], window.back().first, window.back().second);
  return r;
}

namespace detail {

inline std::vector<std::size_t> load_buses(const Case& c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < c.n(); ++i)
    if (!c.regulated(i)) out.push_back(i);
  return out;
}

}  // namespace detail

// coupled single-port Thevenin index from voltages and load currents at every bus
inline TheveninIndex cti(const std::vector<cplx>& v, const std::vector<cplx>& i_load, const AdmittanceMatrix& y,
                         const Case& c, int bus) {
  const std::size_t j = c.bus_index(bus);
  if (c.regulated(j)) throw DomainError("CTI is defined at load buses only");
  auto lb = detail::load_buses(c);
  std::vector<long> pos(c.n(), -1);
  for (std::size_t k = 0; k < lb.size(); ++k) pos[lb[k]] = static_cast<long>(k);
  const auto nl = static_cast<Eigen::Index>(lb.size());
  Eigen::SparseMatrix<cplx> yllt(nl, nl);
  std::vector<Eigen::Triplet<cplx>> t;
  Eigen::VectorXcd src = Eigen::VectorXcd::Zero(nl);  // Y_LG V_G
  for (Eigen::Index col = 0; col < y.y.outerSize(); ++col)
    for (Eigen::SparseMatrix<cplx>::InnerIterator it(y.y, col); it; ++it) {
      const auto r = static_cast<std::size_t>(it.row()), cc = static_cast<std::size_t>(it.col());
      if (pos[r] < 0) continue;
      if (pos[cc] >= 0) t.emplace_back(pos[cc], pos[r], it.value());  // transpose
      else src[pos[r]] += it.value() * v[cc];
    }
  yllt.setFromTriplets(t.begin(), t.end());
  Eigen::SparseLU<Eigen::SparseMatrix<cplx>> lu(yllt);
  if (lu.info() != Eigen::Success) throw SingularError("singular load block");
  Eigen::VectorXcd ej = Eigen::VectorXcd::Zero(nl);
  ej[pos[j]] = 1.0;
  Eigen::VectorXcd zrow = lu.solve(ej);
  if (!zrow.allFinite()) throw SingularError("singular load block");
  cplx e{0.0, 0.0};
  for (Eigen::Index k = 0; k < nl; ++k) e -= zrow[k] * src[k];
  for (Eigen::Index k = 0; k < nl; ++k)
    if (k != pos[j]) e -= zrow[k] * i_load[lb[static_cast<std::size_t>(k)]];
  TheveninIndex r;
  r.estimate = {e, zrow[pos[j]], 1, 0.0};
  r.value = impedance_ratio_index(r.estimate.z_th, v[j], i_load[j]);
  return r;
}

inline TheveninIndex cti(const PFSolution& sol, const AdmittanceMatrix& y, const Case& c, int bus) {
  if (!sol.converged) throw DomainError("CTI requires a converged state");
  Eigen::Map<const Eigen::VectorXcd> vv(sol.v.data(), static_cast<Eigen::Index>(sol.v.size()));
  Eigen::VectorXcd inj = y.y * vv;
  std::vector<cplx> il(sol.v.size());
  for (std::size_t k = 0; k < il.size(); ++k) il[k] = -inj[static_cast<Eigen::Index>(k)];
  return cti(sol.v, il, y, c, bus);
}

// filtered dP / dG with decreasing-conductance samples discarded
template <class Series>
IndexSeries nli(const Series& axis, const Series& p, const Series& g, int window, int bus, double eps_g = 1e-6) {
  IndexSeries out;
  out.kind = IndexKind::nli;
  auto dp = filtered_increment(p, window);
  auto dg = filtered_increment(g, window);
  const std::size_t off = increment_offset(window);
  for (std::size_t k = 0; k < dg.size(); ++k)
    if (dg[k] > eps_g) out.push(axis[off + k], bus, dp[k] / dg[k]);
  return out;
}

// determinant index on constant-power parameters, normalized by its zero-load value
inline double dvsi(const LocalMeasurement& m, const std::vector<cplx>& neighbor_voltages, double p, double q,
                   double v0 = 1.0) {
  HParams t = t_params(m, neighbor_voltages, p, q);
  std::vector<cplx> flat(m.neighbors.size(), cplx(v0, 0.0));
  HParams t0 = t_params(m, flat, 0.0, 0.0);
  const double ref = pi1_raw(circle_geometry(t0));
  if (!(ref > 0.0)) throw IllPosedBusError("non-positive D-VSI reference");
  return pi1_raw(circle_geometry(t)) / ref;
}

// measured form: neighbor voltages reconstructed from currents, injection from the snapshot
inline double dvsi(const LocalMeasurement& m, double v0 = 1.0) {
  std::vector<cplx> vk(m.neighbors.size());
  for (std::size_t k = 0; k < vk.size(); ++k) vk[k] = m.neighbor_voltage(k);
  const cplx s = m.injection();
  return dvsi(m, vk, s.real(), s.imag(), v0);
}

}  // namespace vstab
