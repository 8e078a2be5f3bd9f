#pragma once

#include "eqcbf/common.hpp"
#include "eqcbf/constraints.hpp"
#include "eqcbf/systems.hpp"
#include "eqcbf/value_grid.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Dini-sense verification of the barrier condition
//
//   sup_u  db(x; f(x, u))  >=  -k b(x)
//
// on a band around the zero level set, where db(x; v) is the lower forward
// directional derivative. For a piecewise-multilinear grid interpolant the
// forward quotient is evaluated at a ladder of shrinking steps (never below a
// tenth of a cell, where interpolation noise dominates) and the minimum is
// kept as the conservative estimate.

struct DiniOptions {
  double max_step = 0;        // 0: half the cell diagonal
  double min_step_cells = 0.1;
  int levels = 4;
};

inline double dini_derivative(const std::function<double(const Vec&)>& b, const Vec& x,
                              const Vec& v, double cell, const DiniOptions& opt = {}) {
  double vnorm = v.norm();
  if (vnorm < 1e-15) return 0.0;
  double b0 = b(x);
  double hi = opt.max_step > 0 ? opt.max_step : 0.5 * cell / vnorm;
  double lo = opt.min_step_cells * cell / vnorm;
  double q = std::numeric_limits<double>::infinity();
  bool any = false;
  double t = hi;
  for (int k = 0; k < opt.levels; ++k) {
    if (t < lo) t = lo;
    try {
      q = std::min(q, (b(x + t * v) - b0) / t);
      any = true;
    } catch (const Error&) {
    }
    if (t == lo) break;
    t *= 0.5;
  }
  if (!any) throw Error(Err::OutOfDomain, "forward steps left the barrier's domain");
  return q;
}

// Deterministic candidate inputs: the input set's vertices plus a Halton
// sweep of the interior.
inline std::vector<Vec> candidate_inputs(const InputSet& uset, int n_extra = 64) {
  std::vector<Vec> cands = uset.vertices();
  cands.push_back(uset.project(Vec::Zero(uset.dim())));
  int m = uset.dim();
  for (int i = 0; i < n_extra; ++i) {
    Vec u(m);
    for (int d = 0; d < m; ++d) {
      double t = halton(static_cast<std::uint64_t>(i), nth_prime(d));
      if (uset.kind == InputSet::Kind::Box)
        u[d] = uset.lo[d] + (uset.hi[d] - uset.lo[d]) * t;
      else
        u[d] = uset.radius * (2.0 * t - 1.0);
    }
    cands.push_back(uset.project(u));
  }
  return cands;
}

struct CbfCheckOptions {
  double band = 0.5;       // check states with |b(x)| <= band
  double alpha_k = 1.0;    // linear class-K slope
  int n_states = 400;
  int n_inputs = 64;
  double base_slack = 1e-3;
  std::uint64_t seed = 31337;
};

struct CbfCheckReport {
  int checked = 0;
  int passed = 0;
  int skipped = 0;  // band misses, NaN cells, boundary states
  double fraction = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  Vec worst_x;
};

namespace detail {

inline Vec sample_grid_box(const std::vector<GridAxis>& axes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec x(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const auto& a = axes[i];
    double hi = a.periodic ? a.lo + a.period : a.hi;
    x[static_cast<int>(i)] = a.lo + (hi - a.lo) * unif(rng);
  }
  return x;
}

// Central-difference gradient norm of the interpolant, used to convert cell
// size into a value-space interpolation allowance.
inline double grad_norm_estimate(const ValueGrid& g, const Vec& x) {
  double s2 = 0;
  for (int i = 0; i < g.ndim(); ++i) {
    if (g.axes[i].count == 1) continue;
    double h = 0.5 * g.axes[i].step();
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double vp, vm;
    try {
      vp = g.interpolate(g.clamp_to_bounds(xp));
      vm = g.interpolate(g.clamp_to_bounds(xm));
    } catch (const Error&) {
      continue;
    }
    double d = (vp - vm) / (2.0 * h);
    s2 += d * d;
  }
  return std::sqrt(s2);
}

}  // namespace detail

// Samples the barrier's zero-level band and verifies the Dini CBF condition
// with a sup over deterministic candidate inputs. The per-state slack is
// base_slack plus the interpolation allowance (gradient estimate times cell
// diagonal), since the grid interpolant carries that much error relative to
// the underlying value function.
inline CbfCheckReport check_cbf_condition(const ValueGrid& g, const ControlSystem& sys,
                                          const CbfCheckOptions& opt = {}) {
  if (g.ndim() != sys.state_dim) throw Error(Err::DimMismatch, "grid dim != state dim");
  std::mt19937_64 rng(opt.seed);
  auto beval = [&g](const Vec& x) { return g.interpolate(x); };
  const double cell = cell_diagonal(g.axes);
  std::vector<Vec> cands = candidate_inputs(sys.input_set, opt.n_inputs);
  CbfCheckReport rep;
  int attempts = 0;
  const int max_attempts = 200 * opt.n_states;
  while (rep.checked < opt.n_states && attempts < max_attempts) {
    ++attempts;
    Vec x = detail::sample_grid_box(g.axes, rng);
    double bx;
    try {
      bx = g.interpolate(x);
    } catch (const Error&) {
      ++rep.skipped;
      continue;
    }
    if (std::abs(bx) > opt.band) continue;
    double slack = opt.base_slack + detail::grad_norm_estimate(g, x) * cell;
    double target = -opt.alpha_k * bx - slack;
    double best = -std::numeric_limits<double>::infinity();
    bool boundary = false;
    for (const Vec& u : cands) {
      double d;
      try {
        d = dini_derivative(beval, x, sys.f(x, u), cell);
      } catch (const Error&) {
        boundary = true;
        continue;
      }
      best = std::max(best, d);
      if (best >= target) break;
    }
    if (best == -std::numeric_limits<double>::infinity() && boundary) {
      ++rep.skipped;  // every flow direction leaves the domain: edge state
      continue;
    }
    ++rep.checked;
    double margin = best - (-opt.alpha_k * bx);
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_x = x;
    }
    if (best >= target) ++rep.passed;
  }
  rep.fraction = rep.checked ? static_cast<double>(rep.passed) / rep.checked : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Greedy safety filter: one-step lookahead picking the candidate input whose
// successor keeps the barrier highest.

struct SimResult {
  Trajectory traj;
  double min_h = std::numeric_limits<double>::infinity();
  double min_b = std::numeric_limits<double>::infinity();
  bool completed = false;
};

inline SimResult simulate_safe(const ValueGrid& g, const ControlSystem& sys,
                               const ConstraintFunction& c, const Vec& x0, double duration,
                               double dt = 0.05, int substeps = 4) {
  if (!(duration > 0) || !(dt > 0)) throw Error(Err::BadParam, "bad simulation horizon");
  std::vector<Vec> cands = candidate_inputs(sys.input_set, 64);
  SimResult res;
  Vec x = sys.wrap_state(x0);
  res.traj.times.push_back(0.0);
  res.traj.states.push_back(x);
  res.min_h = c.h(x);
  res.min_b = g.interpolate(g.clamp_to_bounds(x));
  int n_steps = static_cast<int>(std::ceil(duration / dt));
  for (int s = 0; s < n_steps; ++s) {
    double best_b = -std::numeric_limits<double>::infinity();
    Vec best_u;
    Vec best_next;
    for (const Vec& u : cands) {
      Trajectory step;
      try {
        step = integrate(sys, x, {u}, dt, substeps);
      } catch (const Error&) {
        continue;
      }
      const Vec& nxt = step.states.back();
      double bv;
      try {
        bv = g.interpolate(g.clamp_to_bounds(nxt));
      } catch (const Error&) {
        continue;
      }
      if (bv > best_b) {
        best_b = bv;
        best_u = u;
        best_next = nxt;
      }
    }
    if (best_b == -std::numeric_limits<double>::infinity())
      throw Error(Err::NoSafeInput, "every candidate input leaves the barrier's domain");
    Trajectory step = integrate(sys, x, {best_u}, dt, substeps);
    double t0 = res.traj.times.back();
    for (std::size_t j = 1; j < step.states.size(); ++j) {
      res.traj.times.push_back(t0 + step.times[j]);
      res.traj.states.push_back(step.states[j]);
      res.min_h = std::min(res.min_h, c.h(step.states[j]));
    }
    res.traj.inputs.push_back(best_u);
    x = step.states.back();
    res.min_b = std::min(res.min_b, best_b);
  }
  res.completed = true;
  return res;
}

}  // namespace eqcbf
