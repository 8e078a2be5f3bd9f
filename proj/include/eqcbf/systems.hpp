#pragma once

#include <map>
#include <utility>

#include "eqcbf/common.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Admissible input sets

struct InputSet {
  enum class Kind { Box, Ball };

  Kind kind = Kind::Box;
  Vec lo, hi;        // box bounds
  Vec center;        // ball center
  double radius = 0; // ball radius

  static InputSet box(Vec lo_, Vec hi_) {
    InputSet s;
    s.kind = Kind::Box;
    if (lo_.size() != hi_.size()) throw Error(Err::BadParam, "box bounds dim mismatch");
    for (int i = 0; i < lo_.size(); ++i)
      if (!(lo_[i] <= hi_[i])) throw Error(Err::BadParam, "box bounds inverted");
    s.lo = std::move(lo_);
    s.hi = std::move(hi_);
    return s;
  }

  static InputSet ball(Vec center_, double radius_) {
    InputSet s;
    s.kind = Kind::Ball;
    if (radius_ < 0) throw Error(Err::BadParam, "ball radius negative");
    s.center = std::move(center_);
    s.radius = radius_;
    return s;
  }

  int dim() const { return kind == Kind::Box ? static_cast<int>(lo.size()) : static_cast<int>(center.size()); }

  bool contains(const Vec& u, double tol = 1e-9) const {
    if (u.size() != dim()) return false;
    if (kind == Kind::Box) {
      for (int i = 0; i < u.size(); ++i)
        if (u[i] < lo[i] - tol || u[i] > hi[i] + tol) return false;
      return true;
    }
    return (u - center).norm() <= radius + tol;
  }

  // Nearest admissible input (Euclidean projection).
  Vec project(const Vec& u) const {
    if (u.size() != dim()) throw Error(Err::BadParam, "input dim mismatch in project");
    if (kind == Kind::Box) {
      Vec v = u;
      for (int i = 0; i < v.size(); ++i) v[i] = std::min(std::max(v[i], lo[i]), hi[i]);
      return v;
    }
    Vec d = u - center;
    double n = d.norm();
    if (n <= radius || n == 0.0) return u;
    return center + d * (radius / n);
  }

  Vec sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (kind == Kind::Box) {
      Vec u(dim());
      for (int i = 0; i < u.size(); ++i) u[i] = lo[i] + (hi[i] - lo[i]) * unif(rng);
      return u;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec dir(dim());
    for (int i = 0; i < dir.size(); ++i) dir[i] = normal(rng);
    double n = dir.norm();
    if (n == 0.0) return center;
    double r = radius * std::pow(unif(rng), 1.0 / dim());
    return center + dir * (r / n);
  }

  // Extreme points used when approximating sup over U: box corners, or for
  // balls the axis-aligned extremes.
  std::vector<Vec> vertices() const {
    std::vector<Vec> out;
    int m = dim();
    if (kind == Kind::Box) {
      if (m > 12) return out;
      for (std::uint64_t mask = 0; mask < (1ull << m); ++mask) {
        Vec u(m);
        for (int i = 0; i < m; ++i) u[i] = (mask >> i) & 1 ? hi[i] : lo[i];
        out.push_back(u);
      }
      return out;
    }
    for (int i = 0; i < m; ++i) {
      Vec u = center;
      u[i] += radius;
      out.push_back(u);
      u[i] -= 2 * radius;
      out.push_back(u);
    }
    return out;
  }

  // Deterministic samples on the boundary of U.
  std::vector<Vec> boundary_samples(int n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec> out;
    out.reserve(n);
    int m = dim();
    for (int k = 0; k < n; ++k) {
      if (kind == Kind::Box) {
        Vec u(m);
        for (int i = 0; i < m; ++i) u[i] = lo[i] + (hi[i] - lo[i]) * unif(rng);
        int face = static_cast<int>(rng() % static_cast<std::uint64_t>(m));
        u[face] = (rng() & 1) ? hi[face] : lo[face];
        out.push_back(u);
      } else {
        Vec dir(m);
        for (int i = 0; i < m; ++i) dir[i] = normal(rng);
        double nn = dir.norm();
        if (nn == 0.0) dir[0] = nn = 1.0;
        out.push_back(center + dir * (radius / nn));
      }
    }
    return out;
  }

  // Per-dimension half-extent; used to scale optimizer noise.
  Vec halfwidth() const {
    if (kind == Kind::Box) return 0.5 * (hi - lo);
    return Vec::Constant(dim(), radius);
  }

  Vec midpoint() const {
    if (kind == Kind::Box) return 0.5 * (hi + lo);
    return center;
  }
};

// ---------------------------------------------------------------------------
// Control systems

struct ControlSystem {
  std::string name;
  int state_dim = 0;
  int input_dim = 0;
  std::function<Vec(const Vec&, const Vec&)> f;
  InputSet input_set;
  // (state index, period) pairs for angle-like coordinates.
  std::vector<std::pair<int, double>> periodic_dims;
  // Unit direction of motion in position space; null when the notion does not
  // apply (fully actuated first-order systems).
  std::function<Vec2(const Vec&)> velocity_direction;
  // Input channels that act adversarially (disturbances), if any.
  std::vector<int> disturbance_dims;
  // Canonical parameter string, used for hashing and file metadata.
  std::string spec;

  Vec wrap_state(Vec x) const {
    for (const auto& [idx, period] : periodic_dims) {
      double half = 0.5 * period;
      double r = std::fmod(x[idx], period);
      if (r <= -half) r += period;
      else if (r > half) r -= period;
      x[idx] = r;
    }
    return x;
  }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;   // one per substep boundary, including t = 0
  std::vector<Vec> inputs;   // one per segment
};

namespace detail {

inline Vec rk4_step(const ControlSystem& sys, const Vec& x, const Vec& u, double h) {
  Vec k1 = sys.f(x, u);
  Vec k2 = sys.f(x + 0.5 * h * k1, u);
  Vec k3 = sys.f(x + 0.5 * h * k2, u);
  Vec k4 = sys.f(x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

// Integrate a piecewise-constant input schedule; each entry of `inputs` is
// held for `dt` seconds and advanced with `substeps` RK4 steps.
inline Trajectory integrate(const ControlSystem& sys, const Vec& x0, const std::vector<Vec>& inputs,
                            double dt, int substeps = 4) {
  if (!all_finite(x0)) throw Error(Err::NonFiniteState, "non-finite initial state");
  if (x0.size() != sys.state_dim) throw Error(Err::BadParam, "state dim mismatch");
  if (dt <= 0 || substeps < 1) throw Error(Err::BadParam, "bad dt/substeps");
  Trajectory traj;
  traj.inputs = inputs;
  traj.times.reserve(inputs.size() * substeps + 1);
  traj.states.reserve(inputs.size() * substeps + 1);
  Vec x = sys.wrap_state(x0);
  double t = 0.0;
  traj.times.push_back(t);
  traj.states.push_back(x);
  double h = dt / substeps;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].size() != sys.input_dim) throw Error(Err::BadParam, "input dim mismatch");
    for (int s = 0; s < substeps; ++s) {
      x = sys.wrap_state(detail::rk4_step(sys, x, inputs[k], h));
      t = dt * static_cast<double>(k) + h * static_cast<double>(s + 1);
      if (!all_finite(x)) throw Error(Err::NonFiniteState, "state diverged during integration");
      traj.times.push_back(t);
      traj.states.push_back(x);
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Named systems

namespace detail {

inline double get_or(const std::map<std::string, double>& p, const std::string& key, double dflt) {
  auto it = p.find(key);
  return it == p.end() ? dflt : it->second;
}

inline std::string spec_string(const std::string& name, const std::map<std::string, double>& p) {
  std::string s = name;
  for (const auto& [k, v] : p) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %s=%.17g", k.c_str(), v);
    s += buf;
  }
  return s;
}

}  // namespace detail

inline ControlSystem make_linear_system(const Mat& A, const Mat& B, InputSet input) {
  if (A.rows() != A.cols() || B.rows() != A.rows())
    throw Error(Err::BadParam, "linear system shape mismatch");
  if (input.dim() != B.cols()) throw Error(Err::BadParam, "input set dim != B cols");
  ControlSystem sys;
  sys.name = "linear";
  sys.state_dim = static_cast<int>(A.rows());
  sys.input_dim = static_cast<int>(B.cols());
  sys.input_set = std::move(input);
  sys.f = [A, B](const Vec& x, const Vec& u) -> Vec { return A * x + B * u; };
  std::string s = "linear A=[";
  for (int i = 0; i < A.size(); ++i) s += std::to_string(A(i / A.cols(), i % A.cols())) + ",";
  s += "] B=[";
  for (int i = 0; i < B.size(); ++i) s += std::to_string(B(i / B.cols(), i % B.cols())) + ",";
  s += "]";
  sys.spec = s;
  return sys;
}

// Named systems with conventional parameters. Unknown names raise
// UnknownSystem; the `linear` case requires explicit matrices.
inline ControlSystem make_named_system(const std::string& name,
                                       const std::map<std::string, double>& params = {},
                                       const Mat& A = Mat(), const Mat& B = Mat()) {
  using detail::get_or;
  ControlSystem sys;
  sys.name = name;
  sys.spec = detail::spec_string(name, params);

  if (name == "single_integrator") {
    int n = static_cast<int>(get_or(params, "dim", 2));
    if (n < 1) throw Error(Err::BadParam, "dim must be >= 1");
    sys.state_dim = n;
    sys.input_dim = n;
    bool box = params.count("ux_min") || params.count("ux_max");
    if (box) {
      Vec lo(n), hi(n);
      double dlo = -get_or(params, "u_max", 1.0), dhi = get_or(params, "u_max", 1.0);
      for (int i = 0; i < n; ++i) { lo[i] = dlo; hi[i] = dhi; }
      if (params.count("ux_min")) lo[0] = params.at("ux_min");
      if (params.count("ux_max")) hi[0] = params.at("ux_max");
      sys.input_set = InputSet::box(lo, hi);
    } else {
      sys.input_set = InputSet::ball(Vec::Zero(n), get_or(params, "u_max", 1.0));
    }
    sys.f = [](const Vec&, const Vec& u) -> Vec { return u; };
    return sys;
  }

  if (name == "double_integrator") {
    sys.state_dim = 4;  // (x, y, vx, vy)
    sys.input_dim = 2;
    sys.input_set = InputSet::ball(Vec::Zero(2), get_or(params, "u_max", 1.0));
    sys.f = [](const Vec& x, const Vec& u) -> Vec {
      Vec dx(4);
      dx << x[2], x[3], u[0], u[1];
      return dx;
    };
    sys.velocity_direction = [](const Vec& x) -> Vec2 {
      Vec2 v(x[2], x[3]);
      double n = v.norm();
      return n > 1e-12 ? Vec2(v / n) : Vec2(0, 0);
    };
    return sys;
  }

  if (name == "bicycle") {
    double L = get_or(params, "L", 1.0);
    double v_min = get_or(params, "v_min", 0.5);
    double v_max = get_or(params, "v_max", 1.0);
    double zeta_max = get_or(params, "zeta_max", 20.0 * kPi / 180.0);
    if (L <= 0) throw Error(Err::BadParam, "L must be positive");
    sys.state_dim = 3;  // (x, y, psi)
    sys.input_dim = 2;  // (v, zeta)
    Vec lo(2), hi(2);
    lo << v_min, -zeta_max;
    hi << v_max, zeta_max;
    sys.input_set = InputSet::box(lo, hi);
    sys.periodic_dims = {{2, 2.0 * kPi}};
    sys.f = [L](const Vec& x, const Vec& u) -> Vec {
      double beta = std::atan(0.5 * std::tan(u[1]));
      Vec dx(3);
      dx << u[0] * std::cos(x[2] + beta), u[0] * std::sin(x[2] + beta),
          u[0] * std::cos(beta) * std::tan(u[1]) / L;
      return dx;
    };
    sys.velocity_direction = [](const Vec& x) -> Vec2 { return {std::cos(x[2]), std::sin(x[2])}; };
    return sys;
  }

  if (name == "bicycle_polar") {
    double L = get_or(params, "L", 1.0);
    double v_min = get_or(params, "v_min", 0.5);
    double v_max = get_or(params, "v_max", 1.0);
    double zeta_max = get_or(params, "zeta_max", 20.0 * kPi / 180.0);
    sys.state_dim = 3;  // (r, phi, theta): radius, bearing, heading relative to bearing
    sys.input_dim = 2;
    Vec lo(2), hi(2);
    lo << v_min, -zeta_max;
    hi << v_max, zeta_max;
    sys.input_set = InputSet::box(lo, hi);
    sys.periodic_dims = {{1, 2.0 * kPi}, {2, 2.0 * kPi}};
    sys.f = [L](const Vec& x, const Vec& u) -> Vec {
      double beta = std::atan(0.5 * std::tan(u[1]));
      double c = std::cos(x[2] + beta), s = std::sin(x[2] + beta);
      Vec dx(3);
      dx << u[0] * c, u[0] * s / x[0],
          u[0] * std::cos(beta) * std::tan(u[1]) / L - u[0] * s / x[0];
      return dx;
    };
    return sys;
  }

  if (name == "unicycle") {
    double v_min = get_or(params, "v_min", 0.5);
    double v_max = get_or(params, "v_max", 1.0);
    double omega_max = get_or(params, "omega_max", 1.0);
    sys.state_dim = 3;
    sys.input_dim = 2;  // (v, omega)
    Vec lo(2), hi(2);
    lo << v_min, -omega_max;
    hi << v_max, omega_max;
    sys.input_set = InputSet::box(lo, hi);
    sys.periodic_dims = {{2, 2.0 * kPi}};
    sys.f = [](const Vec& x, const Vec& u) -> Vec {
      Vec dx(3);
      dx << u[0] * std::cos(x[2]), u[0] * std::sin(x[2]), u[1];
      return dx;
    };
    sys.velocity_direction = [](const Vec& x) -> Vec2 { return {std::cos(x[2]), std::sin(x[2])}; };
    return sys;
  }

  if (name == "pendulum") {
    double gl = get_or(params, "g_over_l", 1.0);
    double u_max = get_or(params, "u_max", 2.0);
    double d_max = get_or(params, "d_max", 0.0);
    sys.state_dim = 2;
    if (d_max > 0.0) {
      sys.input_dim = 2;  // (torque, matched disturbance)
      Vec lo(2), hi(2);
      lo << -u_max, -d_max;
      hi << u_max, d_max;
      sys.input_set = InputSet::box(lo, hi);
      sys.disturbance_dims = {1};
      sys.f = [gl](const Vec& x, const Vec& u) -> Vec {
        Vec dx(2);
        dx << x[1], -gl * std::sin(x[0]) + u[1] + u[0];
        return dx;
      };
    } else {
      sys.input_dim = 1;
      sys.input_set = InputSet::box(Vec::Constant(1, -u_max), Vec::Constant(1, u_max));
      sys.f = [gl](const Vec& x, const Vec& u) -> Vec {
        Vec dx(2);
        dx << x[1], -gl * std::sin(x[0]) + u[0];
        return dx;
      };
    }
    return sys;
  }

  if (name == "linear") {
    if (A.size() == 0 || B.size() == 0)
      throw Error(Err::MissingParam, "linear system requires matrices A and B");
    InputSet input = params.count("u_radius")
                         ? InputSet::ball(Vec::Zero(B.cols()), params.at("u_radius"))
                         : InputSet::box(Vec::Constant(B.cols(), -get_or(params, "u_max", 1.0)),
                                         Vec::Constant(B.cols(), get_or(params, "u_max", 1.0)));
    ControlSystem lin = make_linear_system(A, B, input);
    return lin;
  }

  throw Error(Err::UnknownSystem, name);
}

}  // namespace eqcbf
