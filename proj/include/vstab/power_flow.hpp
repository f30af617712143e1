#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "case_model.hpp"

namespace vstab {

inline std::pair<double, double> zip_injection(const ZipLoad& load, double v_mag_pu, double lambda) {
  const double v = v_mag_pu / load.v_reference_pu;
  const auto& z = load.coeffs;
  return {lambda * load.p_nominal * (z.alpha_p * v * v + z.beta_p * v + z.gamma_p),
          lambda * load.q_nominal * (z.alpha_q * v * v + z.beta_q * v + z.gamma_q)};
}

// per-bus multipliers (bus index order) applied to nominal load and scheduled generation
struct Direction {
  std::vector<double> load;
  std::vector<double> gen;

  static Direction uniform(const Case& c) {
    return {std::vector<double>(c.n(), 1.0), std::vector<double>(c.n(), 1.0)};
  }
  bool empty() const { return load.empty() && gen.empty(); }
};

struct PFOptions {
  double tolerance = 1e-8;
  int max_iterations = 30;
  bool flat_start = false;
  bool enforce_q_limits = false;
};

enum class PFStatus { converged, max_iterations, singular_jacobian, diverged };

struct PFSolution {
  std::vector<cplx> v;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = std::numeric_limits<double>::infinity();
  double lambda = 0.0;
  PFStatus status = PFStatus::max_iterations;

  cplx at(const Case& c, int bus) const { return v[c.bus_index(bus)]; }
};

class PowerFlowProblem {
 public:
  explicit PowerFlowProblem(const Case& c, Direction dir = {})
      : case_(c), y_(build_admittance(c)), dir_(std::move(dir)) {
    if (dir_.empty()) dir_ = Direction::uniform(c);
    if (dir_.load.size() != c.n() || dir_.gen.size() != c.n())
      throw ValidationError("direction length does not match bus count");
    pg_.assign(c.n(), 0.0);
    for (const auto& g : c.generators)
      if (g.in_service) pg_[c.bus_index(g.bus)] += g.p_injection;
    loads_.resize(c.n());
    for (const auto& l : c.zip_loads) loads_[c.bus_index(l.bus)].push_back(l);
    q_fixed_.assign(c.n(), 0.0);
    forced_pq_.assign(c.n(), 0);
    index_sets();
  }

  const Case& network() const { return case_; }
  const AdmittanceMatrix& admittance() const { return y_; }
  const Direction& direction() const { return dir_; }
  std::size_t n() const { return case_.n(); }
  const std::vector<std::size_t>& angle_buses() const { return ang_; }
  const std::vector<std::size_t>& magnitude_buses() const { return mag_; }
  std::size_t state_size() const { return ang_.size() + mag_.size(); }

  bool regulated(std::size_t i) const { return case_.regulated(i) && !forced_pq_[i]; }

  // demand at bus i for unit lambda, and its derivative wrt |V|
  cplx unit_demand(std::size_t i, double vm, cplx* d_dvm = nullptr) const {
    cplx s{0.0, 0.0}, ds{0.0, 0.0};
    for (const auto& l : loads_[i]) {
      const double vr = l.v_reference_pu, v = vm / vr;
      const auto& z = l.coeffs;
      s += cplx(l.p_nominal * (z.alpha_p * v * v + z.beta_p * v + z.gamma_p),
                l.q_nominal * (z.alpha_q * v * v + z.beta_q * v + z.gamma_q));
      ds += cplx(l.p_nominal * (2.0 * z.alpha_p * v + z.beta_p) / vr,
                 l.q_nominal * (2.0 * z.alpha_q * v + z.beta_q) / vr);
    }
    if (d_dvm) *d_dvm = ds * dir_.load[i];
    return s * dir_.load[i];
  }

  cplx demand(std::size_t i, double vm, double lambda) const { return lambda * unit_demand(i, vm); }

  // scheduled net injection (generation minus demand) at bus i
  cplx scheduled(std::size_t i, double vm, double lambda) const {
    return cplx(lambda * dir_.gen[i] * pg_[i], q_fixed_[i]) - demand(i, vm, lambda);
  }

  Eigen::VectorXcd currents(const std::vector<cplx>& v) const {
    Eigen::Map<const Eigen::VectorXcd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
    return y_.y * vv;
  }

  std::vector<cplx> injections(const std::vector<cplx>& v) const {
    Eigen::VectorXcd i = currents(v);
    std::vector<cplx> s(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) s[k] = v[k] * std::conj(i[static_cast<Eigen::Index>(k)]);
    return s;
  }

  Eigen::VectorXd mismatch(const std::vector<cplx>& v, double lambda) const {
    auto s = injections(v);
    Eigen::VectorXd f(static_cast<Eigen::Index>(state_size()));
    Eigen::Index r = 0;
    for (auto i : ang_) f[r++] = (s[i] - scheduled(i, std::abs(v[i]), lambda)).real();
    for (auto i : mag_) f[r++] = (s[i] - scheduled(i, std::abs(v[i]), lambda)).imag();
    return f;
  }

  // d(mismatch)/d(lambda); mismatch is affine in lambda
  Eigen::VectorXd dmismatch_dlambda(const std::vector<cplx>& v) const {
    Eigen::VectorXd f(static_cast<Eigen::Index>(state_size()));
    Eigen::Index r = 0;
    for (auto i : ang_) f[r++] = -(dir_.gen[i] * pg_[i]) + unit_demand(i, std::abs(v[i])).real();
    for (auto i : mag_) f[r++] = unit_demand(i, std::abs(v[i])).imag();
    return f;
  }

  Eigen::SparseMatrix<double> jacobian(const std::vector<cplx>& v, double lambda) const {
    const auto n = v.size();
    Eigen::VectorXcd cur = currents(v);
    std::vector<long> prow(n, -1), qrow(n, -1), tcol(n, -1), mcol(n, -1);
    long r = 0;
    for (auto i : ang_) prow[i] = tcol[i] = r++;
    for (auto i : mag_) qrow[i] = mcol[i] = r++;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(y_.y.nonZeros()) * 4);
    auto put = [&](std::size_t i, std::size_t k, cplx ds_dt, cplx ds_dm) {
      if (prow[i] >= 0) {
        if (tcol[k] >= 0) t.emplace_back(prow[i], tcol[k], ds_dt.real());
        if (mcol[k] >= 0) t.emplace_back(prow[i], mcol[k], ds_dm.real());
      }
      if (qrow[i] >= 0) {
        if (tcol[k] >= 0) t.emplace_back(qrow[i], tcol[k], ds_dt.imag());
        if (mcol[k] >= 0) t.emplace_back(qrow[i], mcol[k], ds_dm.imag());
      }
    };
    const cplx j1{0.0, 1.0};
    for (Eigen::Index col = 0; col < y_.y.outerSize(); ++col) {
      for (Eigen::SparseMatrix<cplx>::InnerIterator it(y_.y, col); it; ++it) {
        const auto i = static_cast<std::size_t>(it.row()), k = static_cast<std::size_t>(it.col());
        const cplx yik = it.value();
        const cplx uk = v[k] / std::abs(v[k]);
        if (i != k) {
          put(i, k, -j1 * v[i] * std::conj(yik * v[k]), v[i] * std::conj(yik * uk));
        } else {
          const cplx ci = std::conj(cur[static_cast<Eigen::Index>(i)]);
          cplx dd{0.0, 0.0};
          unit_demand(i, std::abs(v[i]), &dd);
          put(i, i, j1 * v[i] * (ci - std::conj(yik * v[i])),
              v[i] * std::conj(yik * uk) + ci * uk + lambda * dd);
        }
      }
    }
    Eigen::SparseMatrix<double> jac(r, r);
    jac.setFromTriplets(t.begin(), t.end());
    jac.makeCompressed();
    return jac;
  }

  Eigen::VectorXd state(const std::vector<cplx>& v) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(state_size()));
    Eigen::Index r = 0;
    for (auto i : ang_) x[r++] = std::arg(v[i]);
    for (auto i : mag_) x[r++] = std::abs(v[i]);
    return x;
  }

  void apply_state(const Eigen::VectorXd& x, std::vector<cplx>& v) const {
    Eigen::Index r = 0;
    for (auto i : ang_) v[i] = std::polar(std::abs(v[i]), x[r++]);
    for (auto i : mag_) v[i] = std::polar(x[r++], std::arg(v[i]));
  }

  std::vector<cplx> initial_voltages(const std::vector<cplx>* warm, bool flat) const {
    std::vector<cplx> v(n());
    for (std::size_t i = 0; i < n(); ++i) {
      const bool reg = regulated(i);
      const double vset = reg ? case_.buses[i].v_setpoint_pu : 1.0;
      if (warm && !flat && warm->size() == n()) {
        const double m = reg ? vset : std::abs((*warm)[i]);
        v[i] = std::polar(m, std::arg((*warm)[i]));
      } else {
        v[i] = cplx(vset, 0.0);
      }
    }
    const auto s = case_.slack_index();
    v[s] = cplx(case_.buses[s].v_setpoint_pu, 0.0);
    return v;
  }

  // plain Newton at fixed lambda, no limit handling
  PFSolution newton(double lambda, const PFOptions& opt, std::vector<cplx> v) const {
    PFSolution sol;
    sol.lambda = lambda;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    for (int it = 0;; ++it) {
      Eigen::VectorXd f = mismatch(v, lambda);
      sol.max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
      sol.iterations = it;
      if (!std::isfinite(sol.max_mismatch)) {
        sol.status = PFStatus::diverged;
        break;
      }
      if (sol.max_mismatch < opt.tolerance) {
        sol.status = PFStatus::converged;
        sol.converged = true;
        break;
      }
      if (it >= opt.max_iterations) {
        sol.status = PFStatus::max_iterations;
        break;
      }
      auto jac = jacobian(v, lambda);
      lu.compute(jac);
      if (lu.info() != Eigen::Success) {
        sol.status = PFStatus::singular_jacobian;
        break;
      }
      Eigen::VectorXd dx = lu.solve(-f);
      if (!dx.allFinite()) {
        sol.status = PFStatus::singular_jacobian;
        break;
      }
      Eigen::VectorXd x = state(v) + dx;
      bool bad = false;
      for (Eigen::Index k = static_cast<Eigen::Index>(ang_.size()); k < x.size(); ++k)
        if (!(x[k] > 1e-3)) bad = true;
      if (bad) {
        sol.status = PFStatus::diverged;
        break;
      }
      apply_state(x, v);
    }
    sol.v = std::move(v);
    return sol;
  }

  PFSolution solve(double lambda, const PFOptions& opt = {}, const std::vector<cplx>* warm = nullptr) const {
    if (!opt.enforce_q_limits) return newton(lambda, opt, initial_voltages(warm, opt.flat_start));
    PowerFlowProblem work(*this);
    std::vector<cplx> v0 = work.initial_voltages(warm, opt.flat_start);
    for (std::size_t round = 0; round <= n(); ++round) {
      PFSolution sol = work.newton(lambda, opt, v0);
      if (!sol.converged) return sol;
      auto s = work.injections(sol.v);
      bool switched = false;
      for (std::size_t i = 0; i < n(); ++i) {
        if (!work.regulated(i) || case_.buses[i].kind == BusKind::slack) continue;
        double qmin = 0.0, qmax = 0.0;
        for (const auto& g : case_.generators)
          if (g.in_service && case_.bus_index(g.bus) == i) {
            qmin += g.q_min;
            qmax += g.q_max;
          }
        const double qg = s[i].imag() + work.demand(i, std::abs(sol.v[i]), lambda).imag();
        if (qg > qmax + opt.tolerance || qg < qmin - opt.tolerance) {
          work.forced_pq_[i] = 1;
          work.q_fixed_[i] = qg > qmax ? qmax : qmin;
          switched = true;
        }
      }
      if (!switched) return sol;
      work.index_sets();
      v0 = sol.v;
    }
    return work.newton(lambda, opt, v0);
  }

 private:
  void index_sets() {
    ang_.clear();
    mag_.clear();
    const auto s = case_.slack_index();
    for (std::size_t i = 0; i < n(); ++i) {
      if (i == s) continue;
      ang_.push_back(i);
      if (!regulated(i)) mag_.push_back(i);
    }
  }

  Case case_;
  AdmittanceMatrix y_;
  Direction dir_;
  std::vector<double> pg_;
  std::vector<std::vector<ZipLoad>> loads_;
  std::vector<double> q_fixed_;
  std::vector<char> forced_pq_;
  std::vector<std::size_t> ang_, mag_;
};

inline PFSolution solve_power_flow(const Case& c, double lambda, const PFOptions& opt = {},
                                   const PFSolution* warm_start = nullptr, const Direction& dir = {}) {
  if (!(opt.tolerance > 0.0)) throw DomainError("tolerance must be positive");
  PowerFlowProblem prob(c, dir);
  return prob.solve(lambda, opt, warm_start ? &warm_start->v : nullptr);
}

// complex power balance residual at every non-slack bus, recomputed from scratch
inline double mismatch_certificate(const Case& c, const PFSolution& sol, const Direction& dir = {}) {
  PowerFlowProblem prob(c, dir);
  auto s = prob.injections(sol.v);
  double worst = 0.0;
  const auto slack = c.slack_index();
  for (std::size_t i = 0; i < c.n(); ++i) {
    if (i == slack) continue;
    cplx r = s[i] - prob.scheduled(i, std::abs(sol.v[i]), sol.lambda);
    worst = std::max(worst, std::abs(r.real()));
    if (!c.regulated(i)) worst = std::max(worst, std::abs(r.imag()));
  }
  return worst;
}

}  // namespace vstab
