#pragma once

#include <complex>
#include <map>
#include <memory>

#include "eqcbf/common.hpp"
#include "eqcbf/constraints.hpp"
#include "eqcbf/systems.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Parameter sets for transform families

struct ParamSet {
  enum class Kind { Interval, VectorBox, LinearSubspace, Discrete };

  Kind kind = Kind::Interval;
  double lo = 0, hi = 0;          // interval
  Vec vlo, vhi;                   // vector box
  Vec2 normal = Vec2(1, 0);       // linear subspace {p in R^2 : <n, p> = 0}
  double range = 5.0;             // sampling extent along the subspace
  std::vector<Vec> values;        // discrete

  static ParamSet interval(double lo_, double hi_) {
    ParamSet s;
    s.kind = Kind::Interval;
    s.lo = lo_;
    s.hi = hi_;
    return s;
  }
  static ParamSet vector_box(Vec lo_, Vec hi_) {
    ParamSet s;
    s.kind = Kind::VectorBox;
    s.vlo = std::move(lo_);
    s.vhi = std::move(hi_);
    return s;
  }
  static ParamSet linear_subspace(const Vec2& n, double sampling_range = 5.0) {
    ParamSet s;
    s.kind = Kind::LinearSubspace;
    double nn = n.norm();
    if (nn < 1e-12) throw Error(Err::BadParam, "subspace normal is zero");
    s.normal = n / nn;
    s.range = sampling_range;
    return s;
  }
  static ParamSet discrete(std::vector<Vec> vals) {
    ParamSet s;
    s.kind = Kind::Discrete;
    s.values = std::move(vals);
    return s;
  }

  bool empty() const { return kind == Kind::Discrete && values.empty(); }

  int dim() const {
    switch (kind) {
      case Kind::Interval: return 1;
      case Kind::VectorBox: return static_cast<int>(vlo.size());
      case Kind::LinearSubspace: return 2;
      case Kind::Discrete: return values.empty() ? 0 : static_cast<int>(values.front().size());
    }
    return 0;
  }

  Vec sample(std::mt19937_64& rng) const {
    if (empty()) throw Error(Err::EmptyParamSet, "sampling an empty parameter set");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    switch (kind) {
      case Kind::Interval: {
        Vec p(1);
        p[0] = lo + (hi - lo) * unif(rng);
        return p;
      }
      case Kind::VectorBox: {
        Vec p(vlo.size());
        for (int i = 0; i < p.size(); ++i) p[i] = vlo[i] + (vhi[i] - vlo[i]) * unif(rng);
        return p;
      }
      case Kind::LinearSubspace: {
        double t = range * (2.0 * unif(rng) - 1.0);
        Vec2 dir(-normal[1], normal[0]);
        Vec p(2);
        p << t * dir[0], t * dir[1];
        return p;
      }
      case Kind::Discrete:
        return values[rng() % values.size()];
    }
    throw Error(Err::BadParam, "unreachable");
  }

  // A few deterministic probes (extremes and midpoints) mixed into checks so
  // that worst cases on interval endpoints are always visited.
  std::vector<Vec> probes() const {
    std::vector<Vec> out;
    switch (kind) {
      case Kind::Interval:
        for (double v : {lo, 0.5 * (lo + hi), hi}) {
          Vec p(1);
          p[0] = v;
          out.push_back(p);
        }
        break;
      case Kind::VectorBox:
        out.push_back(vlo);
        out.push_back(0.5 * (vlo + vhi));
        out.push_back(vhi);
        break;
      case Kind::LinearSubspace: {
        Vec2 dir(-normal[1], normal[0]);
        for (double t : {-range, 0.0, range}) {
          Vec p(2);
          p << t * dir[0], t * dir[1];
          out.push_back(p);
        }
        break;
      }
      case Kind::Discrete:
        out = values;
        break;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Parametric diffeomorphisms

struct ParamDiffeo {
  std::string name;
  int state_dim = 0;
  ParamSet param_set;
  std::function<Vec(const Vec&, const Vec&)> apply;     // D(x; p)
  std::function<Vec(const Vec&, const Vec&)> inverse;   // D^{-1}(y; p)
  std::function<Mat(const Vec&, const Vec&)> jacobian;  // dD/dx; null => finite differences
  std::function<Vec(const Vec&, const Vec&)> input_map;          // D_u(u; p); null = identity
  std::function<Vec(const Vec&, const Vec&)> input_map_inverse;  // D_u^{-1}
  std::vector<int> angle_dims;  // state dims to difference with angle wrapping
  std::string spec;

  Vec map_input(const Vec& u, const Vec& p) const { return input_map ? input_map(u, p) : u; }

  // Residual metric that wraps angle-valued coordinates.
  double state_diff_norm(const Vec& a, const Vec& b) const {
    Vec d = a - b;
    for (int idx : angle_dims) d[idx] = angle_diff(a[idx], b[idx]);
    return d.norm();
  }
};

// Central-difference Jacobian of D(.; p) at x, step 1e-5 * (1 + |x|).
inline Mat fd_jacobian(const std::function<Vec(const Vec&, const Vec&)>& apply, const Vec& x,
                       const Vec& p) {
  double step = 1e-5 * (1.0 + x.norm());
  Vec y0 = apply(x, p);
  Mat J(y0.size(), x.size());
  for (int j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    J.col(j) = (apply(xp, p) - apply(xm, p)) / (2.0 * step);
  }
  return J;
}

inline Mat diffeo_jacobian(const ParamDiffeo& D, const Vec& x, const Vec& p) {
  return D.jacobian ? D.jacobian(x, p) : fd_jacobian(D.apply, x, p);
}

// ---------------------------------------------------------------------------
// Named transform families

namespace detail {

// Unwrapped outward-normal angle of the ellipse boundary point p(sigma) =
// c + (a cos sigma, b sin sigma); continuous and increasing on [0, 2*pi),
// equal to sigma itself when a == b.
inline double boundary_normal_angle(double a, double b, double sigma) {
  double phi = std::atan2(a * std::sin(sigma), b * std::cos(sigma));
  if (phi < 0) phi += 2.0 * kPi;
  // sigma = 0 should give exactly 0, not 2*pi.
  if (sigma < 1e-12 && phi > kPi) phi -= 2.0 * kPi;
  return phi;
}

inline double wrap_sigma(double s) {
  double r = std::fmod(s, 2.0 * kPi);
  if (r < 0) r += 2.0 * kPi;
  return r;
}

}  // namespace detail

// Builds one of the named transform families. Supported cases:
//   translate              p in R^2 added to the position dims
//   rotate_about_point     rotation about (cx, cy); heading/velocity/input opts
//   polar_shift            bearing shift (r, phi, theta) -> (r, phi + p, theta)
//   mirror                 reflection across the axis spanned by R(rho) e2
//   linear                 D_p = P diag(eigs) P^{-1} (+ shift), optionally one free eigenvalue
//   ellipse_boundary_shift rigid motion sliding along an ellipse boundary
//   corner_pivot           rotation about a corner point, heading included
inline ParamDiffeo make_named_transform(const std::string& name,
                                        const std::map<std::string, double>& params = {},
                                        const Mat& P = Mat()) {
  using detail::get_or;
  ParamDiffeo D;
  D.name = name;
  D.spec = detail::spec_string(name, params);

  if (name == "translate") {
    D.state_dim = static_cast<int>(get_or(params, "state_dim", 2));
    double range = get_or(params, "range", 5.0);
    if (params.count("nx") || params.count("ny")) {
      Vec2 n(get_or(params, "nx", 0.0), get_or(params, "ny", 0.0));
      D.param_set = ParamSet::linear_subspace(n, range);
    } else {
      Vec lo = Vec::Constant(2, -range), hi = Vec::Constant(2, range);
      D.param_set = ParamSet::vector_box(lo, hi);
    }
    D.apply = [](const Vec& x, const Vec& p) -> Vec {
      Vec y = x;
      y[0] += p[0];
      y[1] += p[1];
      return y;
    };
    D.inverse = [](const Vec& y, const Vec& p) -> Vec {
      Vec x = y;
      x[0] -= p[0];
      x[1] -= p[1];
      return x;
    };
    int n = D.state_dim;
    D.jacobian = [n](const Vec&, const Vec&) -> Mat { return Mat::Identity(n, n); };
    return D;
  }

  if (name == "rotate_about_point") {
    double cx = get_or(params, "cx", 0.0), cy = get_or(params, "cy", 0.0);
    bool heading = get_or(params, "heading", 0.0) != 0.0;
    bool vel = get_or(params, "vel", 0.0) != 0.0;
    bool rotate_input = get_or(params, "rotate_input", 0.0) != 0.0;
    D.state_dim = static_cast<int>(get_or(params, "state_dim", heading ? 3 : (vel ? 4 : 2)));
    D.param_set = ParamSet::interval(get_or(params, "p_lo", -kPi), get_or(params, "p_hi", kPi));
    if (heading) D.angle_dims = {2};
    int n = D.state_dim;
    D.apply = [cx, cy, heading, vel, n](const Vec& x, const Vec& p) -> Vec {
      Mat2 R = rot2(p[0]);
      Vec y = x;
      Vec2 pos(x[0] - cx, x[1] - cy);
      Vec2 q = R * pos;
      y[0] = q[0] + cx;
      y[1] = q[1] + cy;
      if (heading && n > 2) y[2] = wrap_angle(x[2] + p[0]);
      if (vel && n > 3) {
        Vec2 v(x[2], x[3]);
        Vec2 w = R * v;
        y[2] = w[0];
        y[3] = w[1];
      }
      return y;
    };
    D.inverse = [this_apply = D.apply](const Vec& y, const Vec& p) -> Vec {
      Vec mp(1);
      mp[0] = -p[0];
      return this_apply(y, mp);
    };
    D.jacobian = [heading, vel, n](const Vec&, const Vec& p) -> Mat {
      Mat J = Mat::Identity(n, n);
      J.topLeftCorner<2, 2>() = rot2(p[0]);
      if (vel && n > 3) J.block<2, 2>(2, 2) = rot2(p[0]);
      return J;
    };
    if (rotate_input) {
      D.input_map = [](const Vec& u, const Vec& p) -> Vec {
        Vec w = u;
        Vec2 r = rot2(p[0]) * Vec2(u[0], u[1]);
        w[0] = r[0];
        w[1] = r[1];
        return w;
      };
      D.input_map_inverse = [](const Vec& u, const Vec& p) -> Vec {
        Vec w = u;
        Vec2 r = rot2(-p[0]) * Vec2(u[0], u[1]);
        w[0] = r[0];
        w[1] = r[1];
        return w;
      };
    }
    return D;
  }

  if (name == "polar_shift") {
    D.state_dim = 3;
    D.param_set = ParamSet::interval(get_or(params, "p_lo", -kPi), get_or(params, "p_hi", kPi));
    D.angle_dims = {1, 2};
    D.apply = [](const Vec& x, const Vec& p) -> Vec {
      Vec y = x;
      y[1] = wrap_angle(x[1] + p[0]);
      return y;
    };
    D.inverse = [](const Vec& y, const Vec& p) -> Vec {
      Vec x = y;
      x[1] = wrap_angle(y[1] - p[0]);
      return x;
    };
    D.jacobian = [](const Vec&, const Vec&) -> Mat { return Mat::Identity(3, 3); };
    return D;
  }

  if (name == "mirror") {
    // Reflection of pose states (x, y, psi) across the axis spanned by
    // n = R(rho) e2 through (px, py). Heading reflects across the axis angle
    // rho + pi/2: psi -> pi + 2 rho - psi (the classic rho = 0 case gives
    // psi -> pi - psi). Inputs (v, zeta) map to (v, -zeta).
    double px = get_or(params, "px", 0.0), py = get_or(params, "py", 0.0);
    D.state_dim = 3;
    D.param_set = ParamSet::interval(get_or(params, "p_lo", 0.0), get_or(params, "p_hi", 2.0 * kPi));
    D.angle_dims = {2};
    auto mirror_once = [px, py](const Vec& x, const Vec& p) -> Vec {
      double rho = p[0];
      Mat2 M = rot2(rho) * Eigen::DiagonalMatrix<double, 2>(-1.0, 1.0) * rot2(-rho);
      Vec y = x;
      Vec2 q = M * Vec2(x[0] - px, x[1] - py);
      y[0] = q[0] + px;
      y[1] = q[1] + py;
      if (x.size() > 2) y[2] = wrap_angle(kPi + 2.0 * rho - x[2]);
      return y;
    };
    D.apply = mirror_once;
    D.inverse = mirror_once;  // involution
    D.jacobian = [](const Vec& x, const Vec& p) -> Mat {
      Mat J = Mat::Zero(x.size(), x.size());
      J.topLeftCorner<2, 2>() =
          rot2(p[0]) * Eigen::DiagonalMatrix<double, 2>(-1.0, 1.0) * rot2(-p[0]);
      if (x.size() > 2) J(2, 2) = -1.0;
      return J;
    };
    D.input_map = [](const Vec& u, const Vec&) -> Vec {
      Vec w = u;
      if (w.size() > 1) w[1] = -w[1];
      return w;
    };
    D.input_map_inverse = D.input_map;
    return D;
  }

  if (name == "linear") {
    if (P.size() == 0) throw Error(Err::MissingParam, "linear transform requires eigenbasis P");
    int n = static_cast<int>(P.rows());
    D.state_dim = n;
    Mat Pinv = P.inverse();
    // Eigenvalue template: NaN entries become the free scalar parameter.
    Vec eigs(n);
    int free_idx = -1;
    for (int i = 0; i < n; ++i) {
      std::string key = "eig" + std::to_string(i + 1);
      double v = get_or(params, key, std::numeric_limits<double>::quiet_NaN());
      eigs[i] = v;
      if (std::isnan(v)) {
        if (free_idx >= 0) throw Error(Err::BadParam, "only one free eigenvalue supported");
        free_idx = i;
      }
    }
    double input_scale = get_or(params, "input_scale", 1.0);
    Vec shift = Vec::Zero(n);
    for (int i = 0; i < n; ++i) shift[i] = get_or(params, "dx" + std::to_string(i), 0.0);
    if (free_idx >= 0)
      D.param_set = ParamSet::interval(get_or(params, "p_lo", 0.5), get_or(params, "p_hi", 2.0));
    else
      D.param_set = ParamSet::discrete({Vec(0)});
    auto dp_matrix = [P, Pinv, eigs, free_idx](const Vec& p) -> Mat {
      Vec e = eigs;
      if (free_idx >= 0) {
        if (std::abs(p[0]) < 1e-9) throw Error(Err::BadParam, "eigenvalue 0 is not invertible");
        e[free_idx] = p[0];
      }
      return P * e.asDiagonal() * Pinv;
    };
    D.apply = [dp_matrix, shift](const Vec& x, const Vec& p) -> Vec {
      return dp_matrix(p) * x + shift;
    };
    D.inverse = [P, Pinv, eigs, free_idx, shift](const Vec& y, const Vec& p) -> Vec {
      Vec e = eigs;
      if (free_idx >= 0) e[free_idx] = p[0];
      Vec einv(e.size());
      for (int i = 0; i < e.size(); ++i) {
        if (std::abs(e[i]) < 1e-12) throw Error(Err::BadParam, "singular eigenvalue template");
        einv[i] = 1.0 / e[i];
      }
      return P * einv.asDiagonal() * Pinv * (y - shift);
    };
    D.jacobian = [dp_matrix](const Vec&, const Vec& p) -> Mat { return dp_matrix(p); };
    if (input_scale != 1.0) {
      D.input_map = [input_scale](const Vec& u, const Vec&) -> Vec { return input_scale * u; };
      D.input_map_inverse = [input_scale](const Vec& u, const Vec&) -> Vec {
        return u / input_scale;
      };
    }
    return D;
  }

  if (name == "ellipse_boundary_shift") {
    double a = detail::require(params, "a"), b = detail::require(params, "b");
    double cx = get_or(params, "cx", 0.0), cy = get_or(params, "cy", 0.0);
    double sigma0 = get_or(params, "sigma0", 0.0);
    if (a <= 0 || b <= 0) throw Error(Err::BadShapeParam, "semi-axes must be positive");
    D.state_dim = 3;
    D.param_set = ParamSet::interval(0.0, 2.0 * kPi);
    D.angle_dims = {2};
    auto boundary_point = [a, b, cx, cy](double s) -> Vec2 {
      return {cx + a * std::cos(s), cy + b * std::sin(s)};
    };
    auto dphi = [a, b, sigma0](double sigma) -> double {
      // Net normal rotation from sigma0 to sigma0 + sigma, unwrapped so it is
      // continuous in sigma over [0, 2*pi).
      double base = detail::boundary_normal_angle(a, b, sigma0);
      double ang = detail::boundary_normal_angle(a, b, detail::wrap_sigma(sigma0 + sigma));
      double d = ang - base;
      if (detail::wrap_sigma(sigma0 + sigma) < sigma0 - 1e-15) d += 2.0 * kPi;
      if (d < -1e-12) d += 2.0 * kPi;
      return d;
    };
    D.apply = [boundary_point, dphi, sigma0](const Vec& x, const Vec& p) -> Vec {
      double sigma = detail::wrap_sigma(p[0]);
      double dph = dphi(sigma);
      Vec2 ps = boundary_point(detail::wrap_sigma(sigma0 + sigma));
      Vec2 p0 = boundary_point(sigma0);
      Vec y = x;
      Vec2 q = rot2(-dph) * (Vec2(x[0], x[1]) - ps) + p0;
      y[0] = q[0];
      y[1] = q[1];
      if (x.size() > 2) y[2] = wrap_angle(x[2] - dph);
      return y;
    };
    D.inverse = [boundary_point, dphi, sigma0](const Vec& y, const Vec& p) -> Vec {
      double sigma = detail::wrap_sigma(p[0]);
      double dph = dphi(sigma);
      Vec2 ps = boundary_point(detail::wrap_sigma(sigma0 + sigma));
      Vec2 p0 = boundary_point(sigma0);
      Vec x = y;
      Vec2 q = rot2(dph) * (Vec2(y[0], y[1]) - p0) + ps;
      x[0] = q[0];
      x[1] = q[1];
      if (y.size() > 2) x[2] = wrap_angle(y[2] + dph);
      return x;
    };
    D.jacobian = [dphi](const Vec& x, const Vec& p) -> Mat {
      Mat J = Mat::Identity(x.size(), x.size());
      J.topLeftCorner<2, 2>() = rot2(-dphi(detail::wrap_sigma(p[0])));
      return J;
    };
    return D;
  }

  if (name == "corner_pivot") {
    double px = detail::require(params, "p0x"), py = detail::require(params, "p0y");
    double s0 = get_or(params, "sigma0", 0.0), s1 = get_or(params, "sigma1", 0.5 * kPi);
    D.state_dim = 3;
    D.param_set = ParamSet::interval(std::min(s0, s1), std::max(s0, s1));
    D.angle_dims = {2};
    D.apply = [px, py](const Vec& x, const Vec& p) -> Vec {
      Vec y = x;
      Vec2 q = rot2(-p[0]) * Vec2(x[0] - px, x[1] - py);
      y[0] = q[0] + px;
      y[1] = q[1] + py;
      if (x.size() > 2) y[2] = wrap_angle(x[2] - p[0]);
      return y;
    };
    D.inverse = [px, py](const Vec& y, const Vec& p) -> Vec {
      Vec x = y;
      Vec2 q = rot2(p[0]) * Vec2(y[0] - px, y[1] - py);
      x[0] = q[0] + px;
      x[1] = q[1] + py;
      if (y.size() > 2) x[2] = wrap_angle(y[2] + p[0]);
      return x;
    };
    D.jacobian = [](const Vec& x, const Vec& p) -> Mat {
      Mat J = Mat::Identity(x.size(), x.size());
      J.topLeftCorner<2, 2>() = rot2(-p[0]);
      return J;
    };
    return D;
  }

  throw Error(Err::UnknownTransform, name);
}

// The transcribed first algebraic form of the mirror's positional part,
// exposed only so tests can document that it disagrees with the reflection
// form implemented above (it has determinant +1, i.e. it is a rotation).
inline Vec2 mirror_first_form_position(const Vec2& pos, double rho, const Vec2& xp) {
  Mat2 M = Mat2::Identity() - 2.0 * std::cos(rho) * rot2(rho);
  return M * (pos - xp) + xp;
}

// ---------------------------------------------------------------------------
// Symmetric constraints of linear systems

// Builds h(x) = sum_i c_i <w_i, x> + C from the left eigenvectors w_i of D_p
// with eigenvalue 1. When the eigenbasis P is supplied, each w_i is a row of
// P^{-1} rescaled so its smallest nonzero entry has magnitude 1 (recovering
// integer vectors for integer examples); otherwise unit norm is used.
inline ConstraintFunction linear_symmetric_constraint(const Mat& Dp, const Vec& coeffs, double C,
                                                      const Mat& P = Mat()) {
  int n = static_cast<int>(Dp.rows());
  std::vector<Vec> unit_ws;
  if (P.size() > 0) {
    Mat Pinv = P.inverse();
    Mat lambda = Pinv * Dp * P;  // diagonal if P really is the eigenbasis
    for (int i = 0; i < n; ++i) {
      if (std::abs(lambda(i, i) - 1.0) <= 1e-9) {
        Vec w = Pinv.row(i).transpose();
        double scale = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
          if (std::abs(w[j]) > 1e-12) scale = std::min(scale, std::abs(w[j]));
        unit_ws.push_back(w / scale);
      }
    }
  } else {
    Eigen::EigenSolver<Mat> es(Dp.transpose());
    for (int i = 0; i < n; ++i) {
      std::complex<double> lam = es.eigenvalues()[i];
      if (std::abs(lam - std::complex<double>(1.0, 0.0)) <= 1e-9) {
        Eigen::VectorXcd col = es.eigenvectors().col(i);
        if (col.imag().norm() > 1e-9) continue;
        unit_ws.push_back(col.real());
      }
    }
  }
  if (unit_ws.empty())
    throw Error(Err::NoUnitEigenvalue, "D_p has no eigenvalue 1; no symmetric linear constraint");
  if (coeffs.size() != static_cast<int>(unit_ws.size()))
    throw Error(Err::BadParam, "coefficient count != number of unit eigenvectors");
  ConstraintFunction c;
  c.kind = "linear_symmetric";
  c.spec = "linear_symmetric C=" + std::to_string(C);
  c.radius_analog = 1.0;
  auto ws = std::make_shared<std::vector<Vec>>(std::move(unit_ws));
  Vec cf = coeffs;
  c.h = [ws, cf, C](const Vec& x) -> double {
    double v = C;
    for (std::size_t i = 0; i < ws->size(); ++i) v += cf[static_cast<int>(i)] * (*ws)[i].dot(x);
    return v;
  };
  c.grad_pos = [ws, cf](const Vec&) -> Vec2 {
    Vec2 g(0, 0);
    for (std::size_t i = 0; i < ws->size(); ++i) {
      g[0] += cf[static_cast<int>(i)] * (*ws)[i][0];
      if ((*ws)[i].size() > 1) g[1] += cf[static_cast<int>(i)] * (*ws)[i][1];
    }
    return g;
  };
  return c;
}

// ---------------------------------------------------------------------------
// Certification checks

struct CheckConfig {
  Vec lo, hi;                 // state sampling box
  double tol = 1e-4;
  int n = 200;
  std::uint64_t seed = 12345;
  int n_boundary = 1000;      // input boundary samples for the strong check
};

struct CheckReport {
  double max_residual = 0;
  double mean_residual = 0;
  int samples = 0;
  bool strong = false;
  bool pass = false;
  double region_fraction = 1.0;
  Vec worst_x, worst_p;
  std::string note;
};

namespace detail {

// Shared sampling loop; `residual` maps (x, p, rng) to a scalar residual.
template <typename ResidualFn>
CheckReport run_check(const ParamDiffeo& D, const CheckConfig& cfg, ResidualFn residual,
                      const std::function<bool(const Vec&, const Vec&)>& keep = nullptr) {
  if (D.param_set.empty()) throw Error(Err::EmptyParamSet, "transform has no parameters");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto sample_x = [&]() {
    Vec x(cfg.lo.size());
    for (int i = 0; i < x.size(); ++i) x[i] = cfg.lo[i] + (cfg.hi[i] - cfg.lo[i]) * unif(rng);
    return x;
  };
  CheckReport rep;
  double sum = 0;
  int attempts = 0, kept = 0;
  std::vector<Vec> probe_params = D.param_set.probes();
  while (kept < cfg.n && attempts < 50 * cfg.n) {
    Vec x = sample_x();
    Vec p = attempts < static_cast<int>(probe_params.size()) ? probe_params[attempts]
                                                             : D.param_set.sample(rng);
    ++attempts;
    if (keep && !keep(x, p)) continue;
    double r = residual(x, p, rng);
    ++kept;
    sum += r;
    if (r >= rep.max_residual) {
      rep.max_residual = r;
      rep.worst_x = x;
      rep.worst_p = p;
    }
  }
  if (kept == 0) throw Error(Err::EmptyRegion, "no sample satisfied the region restriction");
  rep.samples = kept;
  rep.mean_residual = sum / kept;
  rep.region_fraction = static_cast<double>(kept) / attempts;
  rep.pass = rep.max_residual <= cfg.tol;
  return rep;
}

}  // namespace detail

// Strong-equivariance input check: D_u(U;p) = U, verified on boundary samples
// mapped both forward and backward.
inline bool input_set_preserved(const ControlSystem& sys, const ParamDiffeo& D,
                                const CheckConfig& cfg) {
  if (!D.input_map) return true;  // identity input map
  if (!D.input_map_inverse) return false;
  std::mt19937_64 rng(mix_seed(cfg.seed, 7));
  auto boundary = sys.input_set.boundary_samples(cfg.n_boundary, mix_seed(cfg.seed, 11));
  std::vector<Vec> ps = D.param_set.probes();
  for (int k = 0; k < 8; ++k) ps.push_back(D.param_set.sample(rng));
  for (const Vec& p : ps)
    for (const Vec& u : boundary) {
      if (!sys.input_set.contains(D.input_map(u, p), 1e-6)) return false;
      if (!sys.input_set.contains(D.input_map_inverse(u, p), 1e-6)) return false;
    }
  return true;
}

// Equivariance of the dynamics: f(D(x;p), D_u(u;p)) = J_D(x;p) f(x, u).
inline CheckReport check_equivariance(const ControlSystem& sys, const ParamDiffeo& D,
                                      const CheckConfig& cfg) {
  CheckReport rep = detail::run_check(
      D, cfg,
      [&](const Vec& x, const Vec& p, std::mt19937_64& rng) -> double {
        Vec u = sys.input_set.sample(rng);
        Vec lhs = sys.f(D.apply(x, p), D.map_input(u, p));
        Vec rhs = diffeo_jacobian(D, x, p) * sys.f(x, u);
        return (lhs - rhs).norm();
      });
  rep.strong = rep.pass && input_set_preserved(sys, D, cfg);
  return rep;
}

// Symmetry of a constraint: h(x) = h(D(x;p)).
inline CheckReport check_symmetry(const ConstraintFunction& c, const ParamDiffeo& D,
                                  const CheckConfig& cfg) {
  return detail::run_check(D, cfg, [&](const Vec& x, const Vec& p, std::mt19937_64&) -> double {
    return std::abs(c.h(x) - c.h(D.apply(x, p)));
  });
}

// Same checks restricted to x in L with D(x;p) in L.
inline CheckReport check_local_equivariance(const ControlSystem& sys, const ParamDiffeo& D,
                                            const std::function<bool(const Vec&)>& region,
                                            const CheckConfig& cfg) {
  CheckReport rep = detail::run_check(
      D, cfg,
      [&](const Vec& x, const Vec& p, std::mt19937_64& rng) -> double {
        Vec u = sys.input_set.sample(rng);
        Vec lhs = sys.f(D.apply(x, p), D.map_input(u, p));
        Vec rhs = diffeo_jacobian(D, x, p) * sys.f(x, u);
        return (lhs - rhs).norm();
      },
      [&](const Vec& x, const Vec& p) { return region(x) && region(D.apply(x, p)); });
  rep.strong = rep.pass && input_set_preserved(sys, D, cfg);
  return rep;
}

inline CheckReport check_local_symmetry(const ConstraintFunction& c, const ParamDiffeo& D,
                                        const std::function<bool(const Vec&)>& region,
                                        const CheckConfig& cfg) {
  return detail::run_check(
      D, cfg,
      [&](const Vec& x, const Vec& p, std::mt19937_64&) -> double {
        return std::abs(c.h(x) - c.h(D.apply(x, p)));
      },
      [&](const Vec& x, const Vec& p) { return region(x) && region(D.apply(x, p)); });
}

}  // namespace eqcbf
