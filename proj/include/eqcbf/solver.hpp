#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>

#include "eqcbf/common.hpp"
#include "eqcbf/constraints.hpp"
#include "eqcbf/systems.hpp"
#include "eqcbf/value_grid.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Finite-horizon max-min problem
//
//   value(x0) = max over piecewise-constant u(.)  of  min_{t in [0,T]} h(x(t)) - gamma t
//   subject to x(theta) in F for some theta in [0,T]
//
// discretized with n_segments inputs and RK4 substeps; the min runs over every
// substep boundary including t = 0.

struct HorizonSpec {
  double T = 1.0;
  int n_segments = 20;
  double gamma = -1;  // < 0: resolved to terminal.delta / (2 T)
  int substeps = 4;
  TerminalSet terminal;

  double resolved_gamma() const {
    if (gamma >= 0) return gamma;
    return terminal.delta / (2.0 * T);
  }
  void validate() const {
    if (!(T > 0)) throw Error(Err::BadParam, "horizon T must be positive");
    if (n_segments < 1 || substeps < 1)
      throw Error(Err::BadParam, "n_segments and substeps must be >= 1");
    if (!horizon_has_terminal()) throw Error(Err::BadParam, "horizon has no terminal set");
  }
  bool horizon_has_terminal() const { return static_cast<bool>(terminal.member); }
};

struct OptimizerConfig {
  int n_iterations = 30;
  int population_size = 64;
  double elite_fraction = 0.125;
  int n_restarts = 2;
  double init_stddev = -1;  // < 0: use the input set halfwidth per dimension
  std::uint64_t rng_seed = 0;
  double infeasibility_penalty_weight = 100.0;

  void validate() const {
    if (n_iterations < 1) throw Error(Err::BadParam, "n_iterations must be >= 1");
    if (population_size < 4) throw Error(Err::BadParam, "population_size must be >= 4");
    if (!(elite_fraction > 0.0) || elite_fraction > 0.5)
      throw Error(Err::BadParam, "elite_fraction must lie in (0, 0.5]");
    if (n_restarts < 1) throw Error(Err::BadParam, "n_restarts must be >= 1");
    if (infeasibility_penalty_weight <= 0)
      throw Error(Err::BadParam, "infeasibility_penalty_weight must be positive");
  }
};

struct CandidateEval {
  double objective = -std::numeric_limits<double>::infinity();  // penalized score
  double value = -std::numeric_limits<double>::infinity();      // min_t h - gamma t
  bool feasible = false;
  int theta_index = -1;       // first substep boundary inside the terminal set
  double min_violation = 0;   // smallest terminal violation along the trajectory
};

inline CandidateEval evaluate_candidate(const ControlSystem& sys, const ConstraintFunction& c,
                                        const HorizonSpec& horizon, const Vec& x0,
                                        const std::vector<Vec>& inputs) {
  const double dt = horizon.T / horizon.n_segments;
  const double gamma = horizon.resolved_gamma();
  Trajectory tr = integrate(sys, x0, inputs, dt, horizon.substeps);
  CandidateEval ev;
  ev.value = std::numeric_limits<double>::infinity();
  ev.min_violation = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < tr.states.size(); ++j) {
    const Vec& x = tr.states[j];
    ev.value = std::min(ev.value, c.h(x) - gamma * tr.times[j]);
    double viol = horizon.terminal.violation(x);
    ev.min_violation = std::min(ev.min_violation, viol);
    if (ev.theta_index < 0 && horizon.terminal.member(x)) ev.theta_index = static_cast<int>(j);
  }
  ev.feasible = ev.theta_index >= 0;
  if (ev.feasible) ev.min_violation = 0;
  ev.objective = ev.value;
  return ev;  // penalty applied by the caller so tests can reuse the raw eval
}

namespace detail {

// Constant input sequences used to warm-start every restart: the projected
// zero input plus axis-aligned extreme ("bang") combinations.
inline std::vector<Vec> warm_start_inputs(const InputSet& u) {
  std::vector<Vec> out;
  int m = u.dim();
  out.push_back(u.project(Vec::Zero(m)));
  if (u.kind == InputSet::Kind::Box) {
    int combos = 1;
    for (int i = 0; i < m && combos <= 32; ++i) combos *= 3;
    if (combos <= 32) {
      for (int code = 0; code < combos; ++code) {
        int rem = code;
        Vec v(m);
        for (int i = 0; i < m; ++i) {
          int digit = rem % 3;
          rem /= 3;
          v[i] = digit == 0 ? u.lo[i] : (digit == 1 ? 0.5 * (u.lo[i] + u.hi[i]) : u.hi[i]);
        }
        out.push_back(v);
      }
    } else {
      for (int i = 0; i < m; ++i) {
        Vec v = 0.5 * (u.lo + u.hi);
        v[i] = u.lo[i];
        out.push_back(v);
        v[i] = u.hi[i];
        out.push_back(v);
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      Vec v = Vec::Zero(m);
      v[i] = u.radius;
      out.push_back(v);
      v[i] = -u.radius;
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace detail

struct PointResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool feasible = false;
  int theta_index = -1;
  std::uint64_t evaluations = 0;
  std::vector<Vec> best_inputs;
};

// Cross-entropy search over piecewise-constant input sequences. Fully
// deterministic for a fixed seed: restarts draw from mix_seed(seed, restart)
// and warm starts are injected at iteration 0 of every restart.
inline PointResult solve_point(const ControlSystem& sys, const ConstraintFunction& c,
                               const HorizonSpec& horizon, const OptimizerConfig& opt,
                               const Vec& x0) {
  horizon.validate();
  opt.validate();
  const int m = sys.input_dim;
  const int dim = m * horizon.n_segments;
  const InputSet& uset = sys.input_set;

  Vec hw = uset.halfwidth();
  Vec base_std(dim);
  for (int s = 0; s < horizon.n_segments; ++s)
    for (int d = 0; d < m; ++d)
      base_std[s * m + d] = opt.init_stddev > 0 ? opt.init_stddev : hw[d];
  const double std_floor_scale = 1e-3;

  auto unflatten = [&](const Vec& flat) {
    std::vector<Vec> seq(horizon.n_segments);
    for (int s = 0; s < horizon.n_segments; ++s)
      seq[s] = uset.project(flat.segment(s * m, m));
    return seq;
  };
  auto flatten = [&](const std::vector<Vec>& seq) {
    Vec flat(dim);
    for (int s = 0; s < horizon.n_segments; ++s) flat.segment(s * m, m) = seq[s];
    return flat;
  };

  PointResult best;
  double best_objective = -std::numeric_limits<double>::infinity();
  std::uint64_t evals = 0;

  auto score = [&](const std::vector<Vec>& seq) -> CandidateEval {
    ++evals;
    try {
      CandidateEval ev = evaluate_candidate(sys, c, horizon, x0, seq);
      if (!ev.feasible)
        ev.objective = ev.value - opt.infeasibility_penalty_weight * ev.min_violation;
      return ev;
    } catch (const Error&) {
      return CandidateEval{};  // diverged; keep the -inf objective
    }
  };

  std::vector<Vec> warm;
  for (const Vec& u : detail::warm_start_inputs(uset))
    warm.push_back(flatten(std::vector<Vec>(horizon.n_segments, u)));

  const int n_elite = std::max(2, static_cast<int>(std::lround(opt.population_size *
                                                               opt.elite_fraction)));
  for (int restart = 0; restart < opt.n_restarts; ++restart) {
    std::mt19937_64 rng(mix_seed(opt.rng_seed, static_cast<std::uint64_t>(restart)));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec mean = warm.front();  // projected zero sequence
    Vec stddev = base_std;
    Vec best_flat_restart;
    double best_obj_restart = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < opt.n_iterations; ++iter) {
      std::vector<Vec> flats;
      flats.reserve(static_cast<std::size_t>(opt.population_size) + warm.size() + 1);
      if (iter == 0)
        for (const Vec& w : warm) flats.push_back(w);
      else if (best_flat_restart.size() == dim)
        flats.push_back(best_flat_restart);  // elitism keeps the incumbent alive
      while (static_cast<int>(flats.size()) < opt.population_size) {
        Vec f(dim);
        for (int k = 0; k < dim; ++k) f[k] = mean[k] + stddev[k] * normal(rng);
        flats.push_back(std::move(f));
      }

      std::vector<CandidateEval> evs(flats.size());
      std::vector<Vec> projected(flats.size());
      for (std::size_t i = 0; i < flats.size(); ++i) {
        std::vector<Vec> seq = unflatten(flats[i]);
        projected[i] = flatten(seq);
        evs[i] = score(seq);
      }
      std::vector<std::size_t> order(flats.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return evs[a].objective > evs[b].objective;
      });

      const auto& top = evs[order.front()];
      if (top.objective > best_obj_restart) {
        best_obj_restart = top.objective;
        best_flat_restart = projected[order.front()];
      }
      if (top.objective > best_objective) {
        best_objective = top.objective;
        best.value = top.value;
        best.feasible = top.feasible;
        best.theta_index = top.theta_index;
        best.best_inputs = unflatten(projected[order.front()]);
      }

      int ne = std::min<int>(n_elite, static_cast<int>(order.size()));
      Vec new_mean = Vec::Zero(dim), new_var = Vec::Zero(dim);
      for (int e = 0; e < ne; ++e) new_mean += projected[order[e]];
      new_mean /= ne;
      for (int e = 0; e < ne; ++e) {
        Vec d = projected[order[e]] - new_mean;
        new_var += d.cwiseProduct(d);
      }
      new_var /= ne;
      mean = new_mean;
      for (int k = 0; k < dim; ++k)
        stddev[k] = std::max(std::sqrt(new_var[k]), std_floor_scale * base_std[k]);
    }
  }
  best.evaluations = evals;
  if (!best.feasible) best.value = std::numeric_limits<double>::quiet_NaN();
  return best;
}

// ---------------------------------------------------------------------------
// Grid synthesis

struct SynthStats {
  std::size_t points = 0;
  std::size_t failures = 0;
  std::size_t skipped = 0;
  std::uint64_t evaluations = 0;
  double seconds = 0;
};

// Solves the max-min problem at every grid point. Cells whose solve fails or
// is infeasible stay NaN with Failed provenance; `mask` (when given) selects
// the subset of points to compute. Timing lives only in `stats`, never in the
// grid metadata, so repeated runs produce byte-identical files.
inline ValueGrid compute_grid(const ControlSystem& sys, const ConstraintFunction& c,
                              const HorizonSpec& horizon, const OptimizerConfig& opt,
                              std::vector<GridAxis> axes, int workers = 0,
                              const std::function<bool(const Vec&)>& mask = nullptr,
                              SynthStats* stats = nullptr) {
  horizon.validate();
  opt.validate();
  ValueGrid g = ValueGrid::make(std::move(axes));
  if (g.ndim() != sys.state_dim)
    throw Error(Err::DimMismatch, "grid dimension != system state dimension");

  std::atomic<std::uint64_t> evals{0};
  std::atomic<std::size_t> failures{0}, skipped{0};
  auto t0 = std::chrono::steady_clock::now();
  parallel_for(g.size(), workers, [&](std::size_t i) {
    Vec x0 = g.point(i);
    if (mask && !mask(x0)) {
      skipped.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    OptimizerConfig local = opt;
    local.rng_seed = mix_seed(opt.rng_seed, static_cast<std::uint64_t>(i));
    try {
      PointResult r = solve_point(sys, c, horizon, local, x0);
      evals.fetch_add(r.evaluations, std::memory_order_relaxed);
      if (r.feasible) {
        g.values[i] = r.value;
        g.provenance[i] = static_cast<std::uint8_t>(Prov::Explicit);
      } else {
        failures.fetch_add(1, std::memory_order_relaxed);
      }
    } catch (const Error&) {
      failures.fetch_add(1, std::memory_order_relaxed);
    }
  });
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  g.metadata["generator"] = "eqcbf";
  g.metadata["system"] = sys.spec;
  g.metadata["constraint"] = c.spec;
  ordered_json hj;
  hj["T"] = horizon.T;
  hj["n_segments"] = horizon.n_segments;
  hj["gamma"] = horizon.resolved_gamma();
  hj["substeps"] = horizon.substeps;
  hj["delta"] = horizon.terminal.delta;
  hj["terminal"] = horizon.terminal.description;
  g.metadata["horizon"] = hj;
  ordered_json oj;
  oj["n_iterations"] = opt.n_iterations;
  oj["population_size"] = opt.population_size;
  oj["elite_fraction"] = opt.elite_fraction;
  oj["n_restarts"] = opt.n_restarts;
  oj["init_stddev"] = opt.init_stddev;
  oj["rng_seed"] = opt.rng_seed;
  oj["infeasibility_penalty_weight"] = opt.infeasibility_penalty_weight;
  g.metadata["optimizer"] = oj;

  if (stats) {
    stats->points = g.size();
    stats->failures = failures.load();
    stats->skipped = skipped.load();
    stats->evaluations = evals.load();
    stats->seconds = secs;
  }
  return g;
}

}  // namespace eqcbf
