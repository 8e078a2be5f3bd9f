#pragma once

#include <limits>
#include <map>
#include <memory>

#include "eqcbf/common.hpp"
#include "eqcbf/systems.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Constraint functions h (safe set = {h >= 0})

struct ConstraintFunction {
  std::string kind;
  std::string spec;  // canonical parameter string
  std::function<double(const Vec&)> h;
  // Gradient of h with respect to the position coordinates (state dims 0, 1);
  // null means use finite differences.
  std::function<Vec2(const Vec&)> grad_pos;
  // Length scale of the protected region; used for default margins.
  double radius_analog = 1.0;

  double operator()(const Vec& x) const { return h(x); }
};

inline Vec2 position_gradient(const ConstraintFunction& c, const Vec& x) {
  if (c.grad_pos) return c.grad_pos(x);
  double step = 1e-6 * (1.0 + x.head(2).norm());
  Vec2 g;
  for (int i = 0; i < 2; ++i) {
    Vec xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (c.h(xp) - c.h(xm)) / (2.0 * step);
  }
  return g;
}

namespace detail {

inline double require(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw Error(Err::MissingParam, "constraint parameter '" + key + "'");
  return it->second;
}

}  // namespace detail

// Pointwise max/min combination of constraints (intersection/union of safe sets).
inline ConstraintFunction combine_constraints(const std::string& op,
                                              std::vector<ConstraintFunction> parts) {
  if (parts.empty()) throw Error(Err::BadParam, "combine_constraints with no parts");
  if (op != "max" && op != "min") throw Error(Err::BadParam, "op must be max or min");
  ConstraintFunction c;
  c.kind = "custom_maxmin";
  c.spec = "custom_maxmin op=" + op;
  for (const auto& p : parts) c.spec += " [" + p.spec + "]";
  c.radius_analog = parts.front().radius_analog;
  bool is_max = op == "max";
  auto shared = std::make_shared<std::vector<ConstraintFunction>>(std::move(parts));
  c.h = [shared, is_max](const Vec& x) -> double {
    double best = (*shared)[0].h(x);
    for (std::size_t i = 1; i < shared->size(); ++i) {
      double v = (*shared)[i].h(x);
      best = is_max ? std::max(best, v) : std::min(best, v);
    }
    return best;
  };
  c.grad_pos = [shared, is_max](const Vec& x) -> Vec2 {
    std::size_t arg = 0;
    double best = (*shared)[0].h(x);
    for (std::size_t i = 1; i < shared->size(); ++i) {
      double v = (*shared)[i].h(x);
      if (is_max ? v > best : v < best) {
        best = v;
        arg = i;
      }
    }
    return position_gradient((*shared)[arg], x);
  };
  return c;
}

inline ConstraintFunction make_constraint(const std::string& kind,
                                          const std::map<std::string, double>& params = {}) {
  using detail::require;
  ConstraintFunction c;
  c.kind = kind;
  c.spec = detail::spec_string(kind, params);

  if (kind == "circle") {
    double cx = detail::get_or(params, "cx", 0.0), cy = detail::get_or(params, "cy", 0.0);
    double r = detail::get_or(params, "r", 1.0);
    if (r <= 0) throw Error(Err::BadShapeParam, "circle radius must be positive");
    c.radius_analog = r;
    c.h = [cx, cy, r](const Vec& x) -> double {
      return std::hypot(x[0] - cx, x[1] - cy) - r;
    };
    c.grad_pos = [cx, cy](const Vec& x) -> Vec2 {
      Vec2 d(x[0] - cx, x[1] - cy);
      double n = d.norm();
      return n > 1e-12 ? Vec2(d / n) : Vec2(1, 0);
    };
    return c;
  }

  if (kind == "ellipse") {
    double a = require(params, "a"), b = require(params, "b");
    double cx = detail::get_or(params, "cx", 0.0), cy = detail::get_or(params, "cy", 0.0);
    if (a <= 0 || b <= 0) throw Error(Err::BadShapeParam, "ellipse semi-axes must be positive");
    c.radius_analog = std::min(a, b);
    c.h = [a, b, cx, cy](const Vec& x) -> double {
      double dx = x[0] - cx, dy = x[1] - cy;
      return dx * dx / (a * a) + dy * dy / (b * b) - 1.0;
    };
    c.grad_pos = [a, b, cx, cy](const Vec& x) -> Vec2 {
      return {2.0 * (x[0] - cx) / (a * a), 2.0 * (x[1] - cy) / (b * b)};
    };
    return c;
  }

  if (kind == "half_plane") {
    double nx = require(params, "nx"), ny = require(params, "ny");
    double px = detail::get_or(params, "px", 0.0), py = detail::get_or(params, "py", 0.0);
    double n = std::hypot(nx, ny);
    if (n < 1e-12) throw Error(Err::BadShapeParam, "half_plane normal is zero");
    nx /= n;
    ny /= n;
    c.radius_analog = 1.0;
    c.h = [nx, ny, px, py](const Vec& x) -> double {
      return nx * (x[0] - px) + ny * (x[1] - py);
    };
    c.grad_pos = [nx, ny](const Vec&) -> Vec2 { return {nx, ny}; };
    return c;
  }

  if (kind == "corner") {
    double n1x = require(params, "n1x"), n1y = require(params, "n1y"), c1 = require(params, "c1");
    double n2x = require(params, "n2x"), n2y = require(params, "n2y"), c2 = require(params, "c2");
    double l1 = std::hypot(n1x, n1y), l2 = std::hypot(n2x, n2y);
    if (l1 < 1e-12 || l2 < 1e-12) throw Error(Err::BadShapeParam, "corner normal is zero");
    n1x /= l1; n1y /= l1; c1 /= l1;
    n2x /= l2; n2y /= l2; c2 /= l2;
    c.radius_analog = 1.0;
    c.h = [=](const Vec& x) -> double {
      return std::max(n1x * x[0] + n1y * x[1] + c1, n2x * x[0] + n2y * x[1] + c2);
    };
    c.grad_pos = [=](const Vec& x) -> Vec2 {
      double h1 = n1x * x[0] + n1y * x[1] + c1, h2 = n2x * x[0] + n2y * x[1] + c2;
      return h1 >= h2 ? Vec2(n1x, n1y) : Vec2(n2x, n2y);
    };
    return c;
  }

  if (kind == "rotated_ellipse_pendulum") {
    // Safe set is the inside of an ellipse whose axes lie along (1,1)/(−1,1).
    double a = detail::get_or(params, "a", 1.0), b = detail::get_or(params, "b", 2.0);
    if (a <= 0 || b <= 0) throw Error(Err::BadShapeParam, "semi-axes must be positive");
    c.radius_analog = 1.0;  // h(0) = 1 sets the depth scale
    c.h = [a, b](const Vec& x) -> double {
      double p = x[0] + x[1], q = x[1] - x[0];
      return 1.0 - std::sqrt(p * p / (2.0 * a * a) + q * q / (2.0 * b * b));
    };
    c.grad_pos = [a, b](const Vec& x) -> Vec2 {
      double p = x[0] + x[1], q = x[1] - x[0];
      double s = std::sqrt(p * p / (2.0 * a * a) + q * q / (2.0 * b * b));
      if (s < 1e-12) return {0, 0};
      double dp = p / (2.0 * a * a * s), dq = q / (2.0 * b * b * s);
      return {-(dp - dq), -(dp + dq)};
    };
    return c;
  }

  if (kind == "custom_maxmin")
    throw Error(Err::MissingParam, "custom_maxmin is built programmatically via combine_constraints");

  throw Error(Err::BadShapeParam, "unknown constraint kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Conservative supporting half-plane of a convex shape

// Returns htilde with htilde <= h, the supporting half-plane at `bp` (a point
// on the zero level set). Verified on a quasi-random probe grid.
inline ConstraintFunction conservative_halfplane(const ConstraintFunction& shape, const Vec2& bp,
                                                 const Vec2& probe_lo = Vec2(-10, -10),
                                                 const Vec2& probe_hi = Vec2(10, 10),
                                                 int n_probes = 10000) {
  if (shape.kind != "circle" && shape.kind != "ellipse")
    throw Error(Err::NotSupporting, "supporting half-plane requires a smooth convex kind");
  Vec bpv(2);
  bpv << bp[0], bp[1];
  if (std::abs(shape.h(bpv)) > 1e-6)
    throw Error(Err::NotSupporting, "point is not on the shape boundary");
  Vec2 n = position_gradient(shape, bpv);
  double nn = n.norm();
  if (nn < 1e-12) throw Error(Err::NotSupporting, "degenerate gradient at boundary point");
  n /= nn;
  std::map<std::string, double> p{{"nx", n[0]}, {"ny", n[1]}, {"px", bp[0]}, {"py", bp[1]}};
  ConstraintFunction ht = make_constraint("half_plane", p);
  ht.radius_analog = shape.radius_analog;
  // Conservativeness probe: htilde must never exceed h.
  Vec lo(2), hi(2);
  lo << probe_lo[0], probe_lo[1];
  hi << probe_hi[0], probe_hi[1];
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_probes; ++i) {
    Vec x = halton_point(static_cast<std::uint64_t>(i), lo, hi);
    worst = std::min(worst, shape.h(x) - ht.h(x));
  }
  if (worst < -1e-9)
    throw Error(Err::ConservativenessViolated,
                "supporting half-plane exceeds h by " + std::to_string(-worst));
  return ht;
}

// ---------------------------------------------------------------------------
// Terminal sets

struct TerminalSet {
  double delta = 0.5;
  std::function<bool(const Vec&)> member;
  // Nonnegative, zero (approximately) inside the set; drives the optimizer's
  // infeasibility penalty.
  std::function<double(const Vec&)> violation;
  std::string description;
};

// Default terminal set {h >= delta}, intersected with "moving away from the
// boundary" for systems that expose a direction of motion.
inline TerminalSet default_terminal_set(const ControlSystem& sys, const ConstraintFunction& c,
                                        double delta = -1.0) {
  TerminalSet t;
  t.delta = delta >= 0 ? delta : 0.5 * c.radius_analog;
  double d = t.delta;
  bool with_heading = static_cast<bool>(sys.velocity_direction);
  auto veldir = sys.velocity_direction;
  auto h = c;
  t.member = [h, d, with_heading, veldir](const Vec& x) -> bool {
    if (h.h(x) < d) return false;
    if (!with_heading) return true;
    Vec2 dir = veldir(x);
    if (dir.squaredNorm() < 1e-16) return true;
    Vec2 g = position_gradient(h, x);
    return dir.dot(g) >= -1e-12;
  };
  t.violation = [h, d, with_heading, veldir](const Vec& x) -> double {
    double v = std::max(d - h.h(x), 0.0);
    if (with_heading) {
      Vec2 dir = veldir(x);
      if (dir.squaredNorm() >= 1e-16) {
        Vec2 g = position_gradient(h, x);
        v += std::max(-dir.dot(g), 0.0);
      }
    }
    return v;
  };
  t.description = "h >= " + std::to_string(d) + (with_heading ? " and heading away" : "");
  return t;
}

}  // namespace eqcbf
