#pragma once

#include "eqcbf/common.hpp"
#include "eqcbf/solver.hpp"
#include "eqcbf/transforms.hpp"
#include "eqcbf/value_grid.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// A symmetry chart evaluates the value function anywhere in the domain from
// values computed explicitly only on the representative subset M-hat: the
// parameter map picks p(x) with D(x; p(x)) in M-hat, and the symmetry of the
// problem guarantees the value is unchanged along the way.

struct SymmetryChart {
  std::string name;
  std::shared_ptr<const ValueGrid> m_grid;  // explicit values over M-hat (shared by copies)
  ParamDiffeo diffeo;
  std::function<Vec(const Vec&)> p_map;        // x -> parameter moving x into M-hat
  std::function<bool(const Vec&)> membership;  // x already in M-hat
  std::function<bool(const Vec&)> domain;      // optional restriction L0 (null = everywhere)
  double clamp_margin_cells = 0.5;

  const ValueGrid& grid() const { return *m_grid; }

  Vec to_chart(const Vec& x) const {
    if (membership(x)) return x;
    return diffeo.apply(x, p_map(x));
  }

  double evaluate(const Vec& x, std::uint8_t* worst_prov = nullptr) const {
    if (domain && !domain(x))
      throw Error(Err::OutsideL0, "state outside the chart's validity region");
    Vec y = m_grid->clamp_to_bounds(to_chart(x), clamp_margin_cells);
    if (!m_grid->in_bounds(y)) throw Error(Err::OutsideMHat, "mapped state missed M-hat");
    return m_grid->interpolate(y, worst_prov);
  }
};

// ---------------------------------------------------------------------------
// Named chart constructions

namespace detail {

inline std::function<bool(const Vec&)> grid_membership(std::shared_ptr<const ValueGrid> g) {
  return [g](const Vec& x) { return g->in_bounds(x); };
}

}  // namespace detail

// Mask selecting the cells of the M-hat grid that must be computed explicitly.
// Only the linear_eigen chart needs one (its M-hat grid shares the full domain
// axes and computes the half with non-negative free-eigenvector coordinate,
// padded by `margin` so boundary interpolation stencils stay complete);
// all other charts use dedicated lower-dimensional axes.
inline std::function<bool(const Vec&)> chart_m_mask(const std::string& name,
                                                    const std::map<std::string, double>& params,
                                                    const Mat& P = Mat(), double margin = 0.0) {
  if (name != "linear_eigen") return nullptr;
  if (P.size() == 0) throw Error(Err::MissingParam, "linear_eigen needs the eigenbasis P");
  int free_idx = static_cast<int>(detail::get_or(params, "free_index", 1.0));
  Mat Pinv = P.inverse();
  return [Pinv, free_idx, margin](const Vec& x) {
    Vec sigma = Pinv * x;
    return sigma[free_idx] >= -margin;
  };
}

// Builds one of the named charts around an already computed M-hat grid.
//   pendulum_negation    D(x) = -x, u -> -u; M-hat is the grid's own box
//   translation          shift one coordinate to the grid's degenerate axis
//   rotation             rotate position (+ heading or velocity block) onto
//                        the negative x-axis slice; `half_psi` folds heading
//                        into [-pi, 0] with an x-axis mirror
//   mirror               reflect across a line; M-hat is one side
//   linear_eigen         flip the sign of the free right-eigenvector coord
inline SymmetryChart build_chart_named(const std::string& name, ValueGrid m_grid,
                                       const std::map<std::string, double>& params = {},
                                       const Mat& P = Mat()) {
  using detail::get_or;
  SymmetryChart ch;
  ch.name = name;
  ch.m_grid = std::make_shared<const ValueGrid>(std::move(m_grid));
  std::shared_ptr<const ValueGrid> grid = ch.m_grid;
  ch.membership = detail::grid_membership(grid);

  if (name == "pendulum_negation") {
    std::map<std::string, double> tp = {{"eig1", -1.0}, {"eig2", -1.0}, {"input_scale", -1.0}};
    ch.diffeo = make_named_transform("linear", tp, Mat2::Identity());
    ch.p_map = [](const Vec&) { return Vec(0); };
    return ch;
  }

  if (name == "translation") {
    int free_dim = static_cast<int>(get_or(params, "free_dim", 0.0));
    int state_dim = grid->ndim();
    if (free_dim < 0 || free_dim >= state_dim)
      throw Error(Err::BadParam, "translation chart: free_dim out of range");
    if (grid->axes[free_dim].count != 1)
      throw Error(Err::BadGrid, "translation chart: the free axis must be degenerate");
    std::map<std::string, double> tp = {{"state_dim", static_cast<double>(state_dim)},
                                        {"nx", free_dim == 0 ? 0.0 : 1.0},
                                        {"ny", free_dim == 0 ? 1.0 : 0.0}};
    ch.diffeo = make_named_transform("translate", tp);
    double target = grid->axes[free_dim].lo;
    ch.p_map = [free_dim, target](const Vec& x) {
      Vec p = Vec::Zero(2);
      p[free_dim] = target - x[free_dim];
      return p;
    };
    return ch;
  }

  if (name == "rotation") {
    double cx = get_or(params, "cx", 0.0), cy = get_or(params, "cy", 0.0);
    bool heading = get_or(params, "heading", 0.0) != 0.0;
    bool vel = get_or(params, "vel", 0.0) != 0.0;
    bool half_psi = get_or(params, "half_psi", heading ? 1.0 : 0.0) != 0.0;
    int n = grid->ndim();
    // Composite family: rotate about the center by p[0]; when p[1] > 0.5 also
    // mirror across the x-axis through the center (position y and heading
    // negate, steering input negates). Positions land on the negative x-axis.
    ParamDiffeo D;
    D.name = "rotation_chart";
    D.state_dim = n;
    Vec plo(2), phi(2);
    plo << -kPi, 0.0;
    phi << kPi, 1.0;
    D.param_set = ParamSet::vector_box(plo, phi);
    if (heading) D.angle_dims = {2};
    D.apply = [cx, cy, heading, vel, n](const Vec& x, const Vec& p) -> Vec {
      Mat2 R = rot2(p[0]);
      bool mirror = p.size() > 1 && p[1] > 0.5;
      Vec y = x;
      Vec2 q = R * Vec2(x[0] - cx, x[1] - cy);
      if (mirror) q[1] = -q[1];
      y[0] = q[0] + cx;
      y[1] = q[1] + cy;
      if (heading && n > 2) {
        double psi = wrap_angle(x[2] + p[0]);
        y[2] = mirror ? -psi : psi;
      }
      if (vel && n > 3) {
        Vec2 w = R * Vec2(x[2], x[3]);
        if (mirror) w[1] = -w[1];
        y[2] = w[0];
        y[3] = w[1];
      }
      return y;
    };
    D.inverse = [cx, cy, heading, vel, n](const Vec& y, const Vec& p) -> Vec {
      bool mirror = p.size() > 1 && p[1] > 0.5;
      Vec x = y;
      Vec2 q(y[0] - cx, y[1] - cy);
      if (mirror) q[1] = -q[1];
      q = rot2(-p[0]) * q;
      x[0] = q[0] + cx;
      x[1] = q[1] + cy;
      if (heading && n > 2) x[2] = wrap_angle((mirror ? -y[2] : y[2]) - p[0]);
      if (vel && n > 3) {
        Vec2 w(y[2], mirror ? -y[3] : y[3]);
        w = rot2(-p[0]) * w;
        x[2] = w[0];
        x[3] = w[1];
      }
      return x;
    };
    D.input_map = [heading](const Vec& u, const Vec& p) -> Vec {
      Vec w = u;
      if (p.size() > 1 && p[1] > 0.5 && heading && w.size() > 1) w[1] = -w[1];
      return w;
    };
    D.input_map_inverse = D.input_map;
    ch.diffeo = D;
    ch.p_map = [cx, cy, heading, half_psi](const Vec& x) {
      Vec p(2);
      p[0] = kPi - std::atan2(x[1] - cy, x[0] - cx);
      p[1] = 0.0;
      if (heading && half_psi) {
        double psi = wrap_angle(x[2] + p[0]);
        if (psi > 0) p[1] = 1.0;
      }
      return p;
    };
    return ch;
  }

  if (name == "mirror") {
    double px = get_or(params, "px", 0.0), py = get_or(params, "py", 0.0);
    double axis_angle = get_or(params, "axis_angle", 0.0);
    std::map<std::string, double> tp = {{"px", px}, {"py", py}};
    ch.diffeo = make_named_transform("mirror", tp);
    double rho = axis_angle - 0.5 * kPi;  // mirror family axis is R(rho) e2
    Vec2 normal(-std::sin(axis_angle), std::cos(axis_angle));
    ch.p_map = [rho](const Vec&) {
      Vec p(1);
      p[0] = rho;
      return p;
    };
    ch.membership = [grid, normal, px, py](const Vec& x) {
      return normal.dot(Vec2(x[0] - px, x[1] - py)) >= 0 && grid->in_bounds(x);
    };
    return ch;
  }

  if (name == "linear_eigen") {
    if (P.size() == 0) throw Error(Err::MissingParam, "linear_eigen needs the eigenbasis P");
    int n = static_cast<int>(P.rows());
    int free_idx = static_cast<int>(get_or(params, "free_index", 1.0));
    if (free_idx < 0 || free_idx >= n)
      throw Error(Err::BadParam, "linear_eigen: free_index out of range");
    std::map<std::string, double> tp;
    for (int i = 0; i < n; ++i)
      if (i != free_idx) tp["eig" + std::to_string(i + 1)] = 1.0;
    tp["p_lo"] = -2.0;
    tp["p_hi"] = 2.0;
    ch.diffeo = make_named_transform("linear", tp, P);
    Mat Pinv = P.inverse();
    ch.p_map = [Pinv, free_idx](const Vec& x) {
      Vec p(1);
      p[0] = (Pinv * x)[free_idx] >= 0 ? 1.0 : -1.0;
      return p;
    };
    ch.membership = [grid, Pinv, free_idx](const Vec& x) {
      return (Pinv * x)[free_idx] >= 0 && grid->in_bounds(x);
    };
    return ch;
  }

  throw Error(Err::BadParam, "unknown chart '" + name + "'");
}

// ---------------------------------------------------------------------------
// Chart verification and inference

struct ChartCheck {
  int samples = 0;
  int mapped_outside = 0;       // to_chart(x) missed M-hat
  double worst_idempotence = 0; // |to_chart(y) - y| over y already in M-hat
  bool pass = false;
};

// Samples the box [lo, hi]; every representative must land inside the M-hat
// grid (after the half-cell clamp) and points already in M-hat must be fixed
// points of the chart map. Throws ChartInvariantViolated on failure.
inline ChartCheck verify_chart(const SymmetryChart& ch, const Vec& lo, const Vec& hi,
                               int n = 10000, std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ChartCheck rep;
  for (int k = 0; k < n; ++k) {
    Vec x(lo.size());
    for (int i = 0; i < x.size(); ++i) x[i] = lo[i] + (hi[i] - lo[i]) * unif(rng);
    if (ch.domain && !ch.domain(x)) continue;
    ++rep.samples;
    Vec y = ch.grid().clamp_to_bounds(ch.to_chart(x), ch.clamp_margin_cells);
    if (!ch.grid().in_bounds(y)) {
      ++rep.mapped_outside;
      continue;
    }
    if (ch.membership(x)) {
      double d = ch.diffeo.state_diff_norm(ch.to_chart(x), x);
      rep.worst_idempotence = std::max(rep.worst_idempotence, d);
    }
  }
  rep.pass = rep.mapped_outside == 0 && rep.worst_idempotence <= 1e-9;
  if (!rep.pass) {
    std::string msg = "chart '" + ch.name + "': ";
    if (rep.mapped_outside > 0)
      msg += std::to_string(rep.mapped_outside) + "/" + std::to_string(rep.samples) +
             " samples mapped outside M-hat";
    else
      msg += "chart map moves points already in M-hat";
    throw Error(Err::ChartInvariantViolated, msg);
  }
  return rep;
}

// Evaluates the chart at every cell of a full-domain grid. Cells inside M-hat
// keep Explicit provenance; all others are Inferred; failures stay NaN.
inline ValueGrid infer_full_grid(const SymmetryChart& ch, std::vector<GridAxis> axes,
                                 int workers = 0, SynthStats* stats = nullptr) {
  ValueGrid g = ValueGrid::make(std::move(axes));
  std::atomic<std::size_t> failures{0};
  auto t0 = std::chrono::steady_clock::now();
  parallel_for(g.size(), workers, [&](std::size_t i) {
    Vec x = g.point(i);
    try {
      g.values[i] = ch.evaluate(x);
      g.provenance[i] = static_cast<std::uint8_t>(ch.membership(x) ? Prov::Explicit
                                                                   : Prov::Inferred);
    } catch (const Error&) {
      failures.fetch_add(1, std::memory_order_relaxed);
    }
  });
  g.metadata = ch.grid().metadata;
  g.metadata["chart"] = ch.name;
  g.metadata["inferred_from_cells"] = ch.grid().size();
  if (stats) {
    stats->points = g.size();
    stats->failures = failures.load();
    stats->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return g;
}

}  // namespace eqcbf
