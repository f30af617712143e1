#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "power_flow.hpp"

namespace vstab {

enum class EventKind { line_outage, generator_outage, shunt_switch };

struct Event {
  double at_lambda = 0.0;
  EventKind kind = EventKind::line_outage;
  int target = 0;  // branch id, or bus id for generator / shunt events
  double delta_b = 0.0;
};

inline Case apply_event(const Case& c, const Event& e) {
  switch (e.kind) {
    case EventKind::line_outage: return with_branch_outage(c, e.target);
    case EventKind::generator_outage: return with_generator_outage(c, e.target);
    case EventKind::shunt_switch: return with_shunt_switch(c, e.target, e.delta_b);
  }
  return c;
}

enum class Termination { snbp_reached, step_limit, event_infeasible };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::snbp_reached: return "snbp_reached";
    case Termination::step_limit: return "step_limit";
    case Termination::event_infeasible: return "event_infeasible";
  }
  return "?";
}

struct TracePoint {
  double lambda = 0.0;
  PFSolution solution;
  std::vector<double> p_injected, q_injected;  // net injection per bus index
  std::vector<double> p_demand, q_demand;      // ZIP demand per bus index
  std::size_t stage = 0;                       // index into PVTrace::stages
  bool after_event = false;
};

struct PVTrace {
  std::vector<TracePoint> points;
  Direction direction;
  std::vector<Case> stages;  // stage 0 is the base case, one more per applied event
  Termination termination = Termination::step_limit;

  const Case& case_at(std::size_t point) const { return stages[points[point].stage]; }
};

struct CPFOptions {
  double start_lambda = 0.0;
  double initial_step = 0.1;
  double max_step = 0.25;
  double min_step = 1e-10;
  double growth = 1.5;
  int grow_after = 3;
  int max_steps = 20000;
  double max_lambda = 1e6;
  double lambda_resolution = 0.01;
  double nose_tolerance = 1e-10;
  PFOptions pf;
};

namespace detail {

inline TracePoint make_point(const PowerFlowProblem& prob, PFSolution sol, std::size_t stage) {
  TracePoint pt;
  pt.lambda = sol.lambda;
  auto s = prob.injections(sol.v);
  const auto n = prob.n();
  pt.p_injected.resize(n);
  pt.q_injected.resize(n);
  pt.p_demand.resize(n);
  pt.q_demand.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    pt.p_injected[i] = s[i].real();
    pt.q_injected[i] = s[i].imag();
    cplx d = prob.demand(i, std::abs(sol.v[i]), sol.lambda);
    pt.p_demand[i] = d.real();
    pt.q_demand[i] = d.imag();
  }
  pt.solution = std::move(sol);
  pt.stage = stage;
  return pt;
}

// Newton on [F(x, lambda); t.(z - z0) - s] with the hyperplane orthogonal to t through z0 + s t
inline bool arclength_correct(const PowerFlowProblem& prob, const PFOptions& opt, const Eigen::VectorXd& z0,
                              const Eigen::VectorXd& t, double s, std::vector<cplx>& v, double& lambda,
                              const std::vector<cplx>& v_base) {
  const auto m = static_cast<Eigen::Index>(prob.state_size());
  Eigen::VectorXd z = z0 + s * t;
  v = v_base;
  prob.apply_state(z.head(m), v);
  lambda = z[m];
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    Eigen::VectorXd f = prob.mismatch(v, lambda);
    const double arc = t.dot(z - z0) - s;
    const double worst = std::max(f.size() ? f.cwiseAbs().maxCoeff() : 0.0, std::abs(arc));
    if (!std::isfinite(worst)) return false;
    if (worst < opt.tolerance) return true;
    if (it == opt.max_iterations) return false;
    auto jac = prob.jacobian(v, lambda);
    Eigen::VectorXd fl = prob.dmismatch_dlambda(v);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(jac.nonZeros() + 2 * m + 1));
    for (Eigen::Index c = 0; c < jac.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator itj(jac, c); itj; ++itj)
        trip.emplace_back(itj.row(), itj.col(), itj.value());
    for (Eigen::Index r = 0; r < m; ++r)
      if (fl[r] != 0.0) trip.emplace_back(r, m, fl[r]);
    for (Eigen::Index c = 0; c <= m; ++c)
      if (t[c] != 0.0) trip.emplace_back(m, c, t[c]);
    Eigen::SparseMatrix<double> aug(m + 1, m + 1);
    aug.setFromTriplets(trip.begin(), trip.end());
    lu.compute(aug);
    if (lu.info() != Eigen::Success) return false;
    Eigen::VectorXd rhs(m + 1);
    rhs.head(m) = -f;
    rhs[m] = -arc;
    Eigen::VectorXd dz = lu.solve(rhs);
    if (!dz.allFinite()) return false;
    z += dz;
    for (Eigen::Index k = static_cast<Eigen::Index>(prob.angle_buses().size()); k < m; ++k)
      if (!(z[k] > 1e-3)) return false;
    prob.apply_state(z.head(m), v);
    lambda = z[m];
  }
  return false;
}

// lambda component of the curve tangent at (v, lambda), oriented along t
inline double tangent_lambda(const PowerFlowProblem& prob, const std::vector<cplx>& v, double lambda,
                             const Eigen::VectorXd& t) {
  const auto m = static_cast<Eigen::Index>(prob.state_size());
  auto jac = prob.jacobian(v, lambda);
  Eigen::VectorXd fl = prob.dmismatch_dlambda(v);
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index c = 0; c < jac.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(jac, c); it; ++it)
      trip.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index r = 0; r < m; ++r)
    if (fl[r] != 0.0) trip.emplace_back(r, m, fl[r]);
  for (Eigen::Index c = 0; c <= m; ++c)
    if (t[c] != 0.0) trip.emplace_back(m, c, t[c]);
  Eigen::SparseMatrix<double> aug(m + 1, m + 1);
  aug.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(aug);
  if (lu.info() != Eigen::Success) return 0.0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs[m] = 1.0;
  Eigen::VectorXd tau = lu.solve(rhs);
  return tau.allFinite() ? tau[m] : 0.0;
}

inline Eigen::VectorXd augmented(const PowerFlowProblem& prob, const std::vector<cplx>& v, double lambda) {
  const auto m = static_cast<Eigen::Index>(prob.state_size());
  Eigen::VectorXd z(m + 1);
  z.head(m) = prob.state(v);
  z[m] = lambda;
  return z;
}

}  // namespace detail

inline PVTrace trace_pv_curve(const Case& base, Direction direction, const std::vector<Event>& events,
                              const CPFOptions& opt = {}) {
  if (direction.empty()) direction = Direction::uniform(base);
  bool any = false;
  for (double d : direction.load) {
    if (d < 0.0) throw DomainError("direction must be non-negative");
    any = any || d > 0.0;
  }
  for (double d : direction.gen) {
    if (d < 0.0) throw DomainError("direction must be non-negative");
    any = any || d > 0.0;
  }
  if (!any) throw DomainError("direction is all zero");

  std::vector<Event> pending = events;
  std::stable_sort(pending.begin(), pending.end(),
                   [](const Event& a, const Event& b) { return a.at_lambda < b.at_lambda; });
  for (const auto& e : pending)
    if (e.at_lambda < opt.start_lambda) throw DomainError("event before trace start");

  PVTrace tr;
  tr.direction = direction;
  tr.stages.push_back(base);
  auto prob = std::make_unique<PowerFlowProblem>(base, direction);

  PFSolution s0 = prob->solve(opt.start_lambda, opt.pf);
  if (!s0.converged) throw TraceError("base case infeasible at lambda " + std::to_string(opt.start_lambda));
  tr.points.push_back(detail::make_point(*prob, s0, 0));

  std::size_t next_event = 0;
  std::size_t stage_start = 0;  // first point of the current stage (secant never spans an event)
  double dl = opt.initial_step;
  int streak = 0;
  int steps = 0;
  bool arclength = false;
  double ds = 0.0;

  // lands on an event lambda; returns false when the post-event system has no solution
  auto fire_event = [&](const PFSolution& pre) -> bool {
    const Event& e = pending[next_event++];
    Case next = apply_event(tr.stages.back(), e);
    try {
      validate_case(next);
    } catch (const ValidationError&) {
      return false;  // islanded or otherwise unusable topology
    }
    tr.stages.push_back(std::move(next));
    prob = std::make_unique<PowerFlowProblem>(tr.stages.back(), direction);
    PFSolution post = prob->solve(pre.lambda, opt.pf, &pre.v);
    if (!post.converged) return false;
    auto pt = detail::make_point(*prob, post, tr.stages.size() - 1);
    pt.after_event = true;
    tr.points.push_back(std::move(pt));
    stage_start = tr.points.size() - 1;
    arclength = false;
    streak = 0;
    return true;
  };

  while (true) {
    if (++steps > opt.max_steps) {
      tr.termination = Termination::step_limit;
      return tr;
    }
    const TracePoint& last = tr.points.back();
    const std::size_t stage = tr.points.back().stage;
    const bool have_secant = tr.points.size() - stage_start >= 2;

    if (last.lambda >= opt.max_lambda) {
      tr.termination = Termination::step_limit;
      return tr;
    }

    if (!arclength) {
      double target = std::min(last.lambda + dl, opt.max_lambda);
      const bool at_event = next_event < pending.size() && target >= pending[next_event].at_lambda;
      if (at_event) target = pending[next_event].at_lambda;
      std::vector<cplx> guess = last.solution.v;
      if (have_secant) {
        const TracePoint& prev = tr.points[tr.points.size() - 2];
        const double h = last.lambda - prev.lambda;
        if (h > 0.0) {
          Eigen::VectorXd x1 = prob->state(last.solution.v), x0 = prob->state(prev.solution.v);
          Eigen::VectorXd xp = x1 + (x1 - x0) * ((target - last.lambda) / h);
          prob->apply_state(xp, guess);
        }
      }
      if (target == last.lambda && at_event) {
        if (!fire_event(last.solution)) {
          tr.termination = Termination::event_infeasible;
          return tr;
        }
        continue;
      }
      PFSolution sol = prob->newton(target, opt.pf, prob->initial_voltages(&guess, false));
      if (sol.converged) {
        tr.points.push_back(detail::make_point(*prob, sol, stage));
        if (++streak >= opt.grow_after) {
          dl = std::min(dl * opt.growth, opt.max_step);
          streak = 0;
        }
        if (at_event && !fire_event(tr.points.back().solution)) {
          tr.termination = Termination::event_infeasible;
          return tr;
        }
        continue;
      }
      streak = 0;
      if (have_secant) {
        arclength = true;
        const TracePoint& prev = tr.points[tr.points.size() - 2];
        ds = (detail::augmented(*prob, last.solution.v, last.lambda) -
              detail::augmented(*prob, prev.solution.v, prev.lambda)).norm();
        continue;
      }
      dl /= 2.0;
      if (dl < opt.min_step) {
        tr.termination = Termination::snbp_reached;
        return tr;
      }
      continue;
    }

    // pseudo-arclength near the nose
    const TracePoint& prev = tr.points[tr.points.size() - 2];
    Eigen::VectorXd z1 = detail::augmented(*prob, last.solution.v, last.lambda);
    Eigen::VectorXd z0 = detail::augmented(*prob, prev.solution.v, prev.lambda);
    Eigen::VectorXd t = z1 - z0;
    if (t.norm() == 0.0) {
      tr.termination = Termination::snbp_reached;
      return tr;
    }
    t.normalize();
    std::vector<cplx> v;
    double lam = 0.0;
    const bool ok = detail::arclength_correct(*prob, opt.pf, z1, t, ds, v, lam, last.solution.v);
    if (!ok) {
      streak = 0;
      ds /= 2.0;
      if (ds < opt.min_step) {
        tr.termination = Termination::snbp_reached;
        return tr;
      }
      continue;
    }
    if (next_event < pending.size() && lam >= pending[next_event].at_lambda && lam > last.lambda) {
      // fall back to a natural step that lands on the event
      arclength = false;
      dl = pending[next_event].at_lambda - last.lambda;
      continue;
    }
    if (lam > last.lambda && detail::tangent_lambda(*prob, v, lam, t) > 0.0) {
      PFSolution sol;
      sol.v = v;
      sol.lambda = lam;
      sol.converged = true;
      sol.status = PFStatus::converged;
      sol.max_mismatch = prob->mismatch(v, lam).cwiseAbs().maxCoeff();
      tr.points.push_back(detail::make_point(*prob, sol, stage));
      if (++streak >= opt.grow_after) {
        ds *= opt.growth;
        streak = 0;
      }
      continue;
    }

    // nose bracketed in (0, ds): golden-section search for the largest lambda
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = 0.0, b = ds;
    std::vector<cplx> best_v = last.solution.v;
    double best_lam = last.lambda;
    auto eval = [&](double s, double& out) -> bool {
      std::vector<cplx> vv;
      double ll = 0.0;
      if (!detail::arclength_correct(*prob, opt.pf, z1, t, s, vv, ll, best_v)) return false;
      out = ll;
      if (ll > best_lam) {
        best_lam = ll;
        best_v = vv;
      }
      return true;
    };
    double c1 = b - g * (b - a), c2 = a + g * (b - a);
    double f1 = 0.0, f2 = 0.0;
    bool ok1 = eval(c1, f1), ok2 = eval(c2, f2);
    while (ok1 && ok2 && (b - a) > opt.nose_tolerance) {
      if (f1 > f2) {
        b = c2;
        c2 = c1;
        f2 = f1;
        c1 = b - g * (b - a);
        ok1 = eval(c1, f1);
      } else {
        a = c1;
        c1 = c2;
        f1 = f2;
        c2 = a + g * (b - a);
        ok2 = eval(c2, f2);
      }
    }
    if (best_lam > last.lambda) {
      PFSolution sol;
      sol.v = best_v;
      sol.lambda = best_lam;
      sol.converged = true;
      sol.status = PFStatus::converged;
      sol.max_mismatch = prob->mismatch(best_v, best_lam).cwiseAbs().maxCoeff();
      tr.points.push_back(detail::make_point(*prob, sol, stage));
    }
    tr.termination = Termination::snbp_reached;
    return tr;
  }
}

inline double find_snbp(const PVTrace& tr) {
  if (tr.termination != Termination::snbp_reached)
    throw TraceError(std::string("trace ended with ") + to_string(tr.termination));
  if (tr.points.empty()) throw TraceError("empty trace");
  return tr.points.back().lambda;
}

inline double find_max_power_point(const PVTrace& tr, int bus) {
  if (tr.points.empty()) throw TraceError("empty trace");
  const Case& c0 = tr.stages.front();
  const std::size_t i = c0.bus_index(bus);
  const ZipLoad* l = c0.load_at(bus);
  if (!l || l->p_nominal == 0.0 || tr.direction.load[i] == 0.0) throw DomainError("zero load at bus " + std::to_string(bus));
  std::size_t m = 0;
  for (std::size_t k = 1; k < tr.points.size(); ++k)
    if (tr.points[k].p_demand[i] > tr.points[m].p_demand[i]) m = k;
  if (m == 0 || m + 1 >= tr.points.size()) return tr.points[m].lambda;
  const double x0 = tr.points[m - 1].lambda, x1 = tr.points[m].lambda, x2 = tr.points[m + 1].lambda;
  const double y0 = tr.points[m - 1].p_demand[i], y1 = tr.points[m].p_demand[i], y2 = tr.points[m + 1].p_demand[i];
  if (!(x0 < x1 && x1 < x2)) return x1;
  const double num = (x1 - x0) * (x1 - x0) * (y1 - y2) - (x1 - x2) * (x1 - x2) * (y1 - y0);
  const double den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
  if (den == 0.0) return x1;
  const double xv = x1 - 0.5 * num / den;
  return std::clamp(xv, x0, x2);
}

}  // namespace vstab
