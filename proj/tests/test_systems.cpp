#include <catch2/catch_amalgamated.hpp>

#include "eqcbf/systems.hpp"

using namespace eqcbf;

namespace {
Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
Vec vec3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}
}  // namespace

TEST_CASE("box input set: contains, project, vertices") {
  InputSet u = InputSet::box(vec2(-1, 0.5), vec2(1, 1));
  CHECK(u.dim() == 2);
  CHECK(u.contains(vec2(0, 0.75)));
  CHECK_FALSE(u.contains(vec2(0, 0.4)));
  Vec p = u.project(vec2(3, 0));
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.5);
  CHECK(u.vertices().size() == 4);
  Vec hw = u.halfwidth();
  CHECK(hw[0] == Catch::Approx(1.0));
  CHECK(hw[1] == Catch::Approx(0.25));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) CHECK(u.contains(u.sample(rng)));
}

TEST_CASE("ball input set: projection and boundary samples") {
  InputSet u = InputSet::ball(Vec::Zero(2), 2.0);
  Vec p = u.project(vec2(6, 8));
  CHECK(p.norm() == Catch::Approx(2.0));
  CHECK(p[0] == Catch::Approx(1.2));
  CHECK(p[1] == Catch::Approx(1.6));
  CHECK(u.contains(vec2(1.0, 1.0)));
  for (const Vec& b : u.boundary_samples(16, 7)) CHECK(b.norm() == Catch::Approx(2.0));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) CHECK(u.sample(rng).norm() <= 2.0 + 1e-12);
}

TEST_CASE("input set rejects malformed bounds") {
  CHECK_THROWS_AS(InputSet::box(vec2(1, 0), vec2(0, 1)), Error);
  CHECK_THROWS_AS(InputSet::ball(Vec::Zero(2), -1.0), Error);
}

TEST_CASE("single integrator integrates exactly") {
  // [DERIVED] x' = u is linear, so RK4 reproduces x0 + u T to roundoff
  ControlSystem sys = make_named_system("single_integrator");
  std::vector<Vec> inputs(4, vec2(0.3, 0.4));
  Trajectory tr = integrate(sys, vec2(1, -1), inputs, 0.5);
  CHECK(tr.states.back()[0] == Catch::Approx(1.6).epsilon(1e-12));
  CHECK(tr.states.back()[1] == Catch::Approx(-0.2).epsilon(1e-12));
  CHECK(tr.times.back() == Catch::Approx(2.0));
  CHECK(tr.states.size() == 17);  // 4 segments x 4 substeps + initial state
}

TEST_CASE("double integrator matches the quadratic closed form") {
  // [DERIVED] constant-input solution x0 + v0 t + u t^2 / 2; RK4 is exact on
  // polynomials of this degree
  ControlSystem sys = make_named_system("double_integrator");
  Vec x0(4);
  x0 << 1, 2, 0.3, -0.4;
  std::vector<Vec> inputs(4, vec2(0.5, 0.25));
  Trajectory tr = integrate(sys, x0, inputs, 0.5);
  const Vec& xf = tr.states.back();
  CHECK(xf[0] == Catch::Approx(2.6).epsilon(1e-12));
  CHECK(xf[1] == Catch::Approx(1.7).epsilon(1e-12));
  CHECK(xf[2] == Catch::Approx(1.3).epsilon(1e-12));
  CHECK(xf[3] == Catch::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("pendulum trajectory against a high-accuracy reference") {
  // [DERIVED] reference from RK4 at h = 5e-7 on theta' = omega,
  // omega' = -sin(theta) + u with u = 1, x0 = (0.5, 0), T = 1
  const double ref_theta = 0.7423324596043374;
  const double ref_omega = 0.45087403958236494;
  ControlSystem sys = make_named_system("pendulum", {{"g_over_l", 1.0}, {"u_max", 2.0}});
  std::vector<Vec> inputs(2, Vec::Constant(1, 1.0));
  Trajectory tr = integrate(sys, vec2(0.5, 0.0), inputs, 0.5, 4);
  CHECK(tr.states.back()[0] == Catch::Approx(ref_theta).margin(2e-6));
  CHECK(tr.states.back()[1] == Catch::Approx(ref_omega).margin(2e-6));

  // fourth-order convergence: halving the step shrinks the error ~16x
  auto err = [&](int substeps) {
    Trajectory t = integrate(sys, vec2(0.5, 0.0), inputs, 0.5, substeps);
    return std::hypot(t.states.back()[0] - ref_theta, t.states.back()[1] - ref_omega);
  };
  CHECK(err(1) / err(2) > 10.0);
}

TEST_CASE("bicycle arc against the closed form") {
  // [DERIVED] constant (v, zeta) drives a circular arc: with
  // beta = atan(tan(zeta)/2), omega = v cos(beta) tan(zeta) / L,
  // x = (v/omega)(sin(omega t + beta) - sin beta), psi = omega t
  ControlSystem sys = make_named_system("bicycle", {{"L", 1.0}});
  std::vector<Vec> inputs(4, vec2(1.0, 0.2));
  Trajectory tr = integrate(sys, vec3(0, 0, 0), inputs, 0.5, 4);
  const Vec& xf = tr.states.back();
  CHECK(xf[0] == Catch::Approx(1.8961628451852743).margin(1e-8));
  CHECK(xf[1] == Catch::Approx(0.5921387910877419).margin(1e-8));
  CHECK(xf[2] == Catch::Approx(0.4033535713864087).margin(1e-10));
}

TEST_CASE("bicycle default input box") {
  ControlSystem sys = make_named_system("bicycle");
  CHECK(sys.input_set.lo[0] == Catch::Approx(0.5));
  CHECK(sys.input_set.hi[0] == Catch::Approx(1.0));
  CHECK(sys.input_set.hi[1] == Catch::Approx(20.0 * kPi / 180.0));
  CHECK(sys.periodic_dims.size() == 1);
  CHECK(sys.periodic_dims[0].first == 2);
}

TEST_CASE("unicycle arc against the closed form") {
  // [DERIVED] x = (v/w) sin(w t), y = (v/w)(1 - cos(w t)), psi = w t
  ControlSystem sys = make_named_system("unicycle", {{"omega_max", 1.0}});
  std::vector<Vec> inputs(6, vec2(0.8, 0.5));
  Trajectory tr = integrate(sys, vec3(0, 0, 0), inputs, 0.5, 4);
  CHECK(tr.states.back()[0] == Catch::Approx(1.5959919785664871).margin(1e-7));
  CHECK(tr.states.back()[1] == Catch::Approx(1.4868204773316753).margin(1e-7));
  CHECK(tr.states.back()[2] == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("heading wraps during integration") {
  // [DERIVED] unicycle at omega = 1 for 4 s ends at psi = 4 - 2 pi after wrap
  ControlSystem sys = make_named_system("unicycle", {{"omega_max", 1.0}});
  std::vector<Vec> inputs(8, vec2(0.5, 1.0));
  Trajectory tr = integrate(sys, vec3(0, 0, 0), inputs, 0.5, 4);
  CHECK(tr.states.back()[2] == Catch::Approx(4.0 - 2.0 * kPi));
  for (const Vec& x : tr.states) {
    CHECK(x[2] <= kPi + 1e-12);
    CHECK(x[2] > -kPi - 1e-12);
  }
}

TEST_CASE("bicycle_polar bearing dynamics") {
  // [DERIVED] heading aligned with the bearing (theta = 0, zeta = 0): the
  // range grows at v and the bearing rate is v sin(theta)/r = 0
  ControlSystem sys = make_named_system("bicycle_polar", {{"L", 1.0}});
  Vec x = vec3(2.0, 0.7, 0.0);
  Vec dx = sys.f(x, vec2(1.0, 0.0));
  CHECK(dx[0] == Catch::Approx(1.0));
  CHECK(dx[1] == Catch::Approx(0.0).margin(1e-15));
  CHECK(dx[2] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("pendulum with matched disturbance exposes a second input") {
  ControlSystem sys =
      make_named_system("pendulum", {{"u_max", 2.0}, {"d_max", 0.5}});
  CHECK(sys.input_dim == 2);
  REQUIRE(sys.disturbance_dims.size() == 1);
  CHECK(sys.disturbance_dims[0] == 1);
  Vec dx = sys.f(vec2(0.0, 0.0), vec2(1.0, -0.5));
  CHECK(dx[1] == Catch::Approx(0.5));
}

TEST_CASE("linear system from matrices") {
  Mat A(2, 2), B(2, 1);
  A << 0, 1, 0, 0;
  B << 0, 1;
  ControlSystem sys = make_linear_system(A, B, InputSet::box(Vec::Constant(1, -1), Vec::Constant(1, 1)));
  Vec dx = sys.f(vec2(1, 2), Vec::Constant(1, 0.5));
  CHECK(dx[0] == Catch::Approx(2.0));
  CHECK(dx[1] == Catch::Approx(0.5));
}

TEST_CASE("integration rejects diverging states") {
  ControlSystem sys;
  sys.name = "blowup";
  sys.state_dim = 1;
  sys.input_dim = 1;
  sys.input_set = InputSet::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0));
  sys.f = [](const Vec& x, const Vec&) -> Vec { return x.cwiseProduct(x); };
  std::vector<Vec> inputs(10, Vec::Constant(1, 0.0));
  CHECK_THROWS_AS(integrate(sys, Vec::Constant(1, 5.0), inputs, 1.0), Error);
}

TEST_CASE("integrate validates arguments") {
  ControlSystem sys = make_named_system("single_integrator");
  std::vector<Vec> inputs(2, vec2(0, 0));
  CHECK_THROWS_AS(integrate(sys, vec3(0, 0, 0), inputs, 0.5), Error);
  CHECK_THROWS_AS(integrate(sys, vec2(0, 0), inputs, -0.5), Error);
  std::vector<Vec> bad(2, Vec::Constant(1, 0.0));
  CHECK_THROWS_AS(integrate(sys, vec2(0, 0), bad, 0.5), Error);
}

TEST_CASE("unknown system name") {
  CHECK_THROWS_AS(make_named_system("hovercraft"), Error);
}
