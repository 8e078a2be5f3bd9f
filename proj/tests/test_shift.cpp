#include <catch2/catch_amalgamated.hpp>

#include "eqcbf/shift_synthesis.hpp"
#include "matchers.hpp"

using namespace eqcbf;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Slide family on a synthetic base: b(x; sigma) = -(x0 - sigma - 1)^2 with the
// exact argmax sigma* = x0 - 1, so the resolver can be made exactly right (or
// deliberately wrong) and every expected maximum is known in closed form.
struct SlideSetup {
  BaseCBF base;
  ShiftFamily fam;
};

SlideSetup make_slide() {
  SlideSetup s;
  s.base.eval = [](const Vec& y) { return -(y[0] - 1.0) * (y[0] - 1.0); };
  s.base.epsilon_M = 0;
  s.fam.diffeo.name = "slide";
  s.fam.diffeo.state_dim = 2;
  s.fam.diffeo.apply = [](const Vec& x, const Vec& p) {
    Vec y = x;
    y[0] -= p[0];
    return y;
  };
  s.fam.diffeo.inverse = [](const Vec& y, const Vec& p) {
    Vec x = y;
    x[0] += p[0];
    return x;
  };
  s.fam.sigma_lo = 0;
  s.fam.sigma_hi = 2;
  s.fam.periodic_sigma = false;
  s.fam.resolver = [](const Vec& x) {
    return std::vector<double>{std::min(std::max(x[0] - 1.0, 0.0), 2.0)};
  };
  return s;
}

}  // namespace

TEST_CASE("ellipse normal feet match the independently computed roots") {
  // [DERIVED] a=2, b=1 centered at the origin, sigma0 = 0
  auto feet = ellipse_normal_feet(2, 1, 0, 0, 0, Vec2(3, 0));
  REQUIRE(feet.size() == 1);  // the far-side foot projects inward and is culled
  CHECK(feet[0] == Catch::Approx(0.0).margin(1e-12));

  feet = ellipse_normal_feet(2, 1, 0, 0, 0, Vec2(0, 3));
  REQUIRE(feet.size() == 1);
  CHECK(feet[0] == Catch::Approx(kPi / 2).margin(1e-9));

  // [DERIVED] root of 6 sin s - 3 cos s - 3 sin s cos s for the query (2, 2),
  // frozen from an independent bracketing scan
  feet = ellipse_normal_feet(2, 1, 0, 0, 0, Vec2(2, 2));
  REQUIRE(feet.size() == 1);
  CHECK(feet[0] == Catch::Approx(0.805403303343520).margin(1e-9));

  // interior fallback: at the center every foot is inward; all four critical
  // parameters of the axis-aligned ellipse come back, sorted
  feet = ellipse_normal_feet(2, 1, 0, 0, 0, Vec2(0, 0));
  REQUIRE(feet.size() == 4);
  CHECK(feet[0] == Catch::Approx(0.0).margin(1e-9));
  CHECK(feet[1] == Catch::Approx(kPi / 2).margin(1e-9));
  CHECK(feet[2] == Catch::Approx(kPi).margin(1e-9));
  CHECK(feet[3] == Catch::Approx(3 * kPi / 2).margin(1e-9));

  // circle degeneration: the foot is the polar angle of the query
  feet = ellipse_normal_feet(1, 1, 0, 0, 0, Vec2(2 * std::cos(0.7), 2 * std::sin(0.7)));
  REQUIRE(feet.size() == 1);
  CHECK(feet[0] == Catch::Approx(0.7).margin(1e-12));

  // sigma0 shifts the returned offsets
  feet = ellipse_normal_feet(1, 1, 0, 0, 0.3, Vec2(2 * std::cos(0.7), 2 * std::sin(0.7)));
  REQUIRE(feet.size() == 1);
  CHECK(feet[0] == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("B_full finds the analytic maximum and keeps feet in its candidate set") {
  SlideSetup s = make_slide();
  SigmaValue full = B_full(s.base, s.fam, vec2(2.3, 0.0), 33);
  CHECK(full.defined);
  CHECK(full.value == Catch::Approx(0.0).margin(1e-15));  // exact foot wins
  CHECK(full.sigma == Catch::Approx(1.3).margin(1e-12));

  SigmaValue partial = B_partial(s.base, s.fam, vec2(2.3, 0.0));
  CHECK(partial.value == Catch::Approx(0.0).margin(1e-15));

  // grid + golden refinement alone still recovers the smooth maximum
  SigmaValue nofeet = B_full(s.base, s.fam, vec2(2.3, 0.0), 33, false);
  CHECK(nofeet.value == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("the partial construction never exceeds the full one") {
  SlideSetup s = make_slide();
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> unif(-1.0, 4.0);
  for (int k = 0; k < 200; ++k) {
    Vec x = vec2(unif(rng), 0.0);
    double bp = B_partial(s.base, s.fam, x).value;
    double bf = B_full(s.base, s.fam, x, 64).value;
    CHECK(bp <= bf + 1e-9);
  }
}

TEST_CASE("sigma ties resolve to the smaller parameter") {
  SlideSetup s = make_slide();
  s.base.eval = [](const Vec&) { return 5.0; };
  SigmaValue sv = B_full(s.base, s.fam, vec2(0.4, 0.0), 16);
  CHECK(sv.value == 5.0);
  CHECK(sv.sigma == 0.0);
}

TEST_CASE("shift evaluation failures carry dedicated error codes") {
  SlideSetup s = make_slide();
  s.base.eval = [](const Vec&) -> double {
    throw Error(Err::OutOfDomain, "nothing is known anywhere");
  };
  CHECK_THROWS_MATCHES(b_sigma(s.base, s.fam, vec2(1, 0), 0.5), Error,
                       ErrorCodeIs(Err::OutsideKnownRegion));
  CHECK_THROWS_MATCHES(B_full(s.base, s.fam, vec2(1, 0), 16), Error,
                       ErrorCodeIs(Err::OutsideKnownRegion));
  CHECK_THROWS_MATCHES(B_partial(s.base, s.fam, vec2(1, 0)), Error,
                       ErrorCodeIs(Err::OutsideMHat));

  SlideSetup t = make_slide();
  t.fam.resolver = [](const Vec&) { return std::vector<double>{}; };
  CHECK_THROWS_MATCHES(B_partial(t.base, t.fam, vec2(1, 0)), Error,
                       ErrorCodeIs(Err::OutsideMHat));
  t.fam.resolver = nullptr;
  CHECK_THROWS_MATCHES(B_partial(t.base, t.fam, vec2(1, 0)), Error,
                       ErrorCodeIs(Err::BadParam));
  CHECK_THROWS_MATCHES(B_full(t.base, t.fam, vec2(1, 0), 1), Error,
                       ErrorCodeIs(Err::BadParam));
}

TEST_CASE("shift condition passes when feet dominate the sigma grid") {
  SlideSetup s = make_slide();
  std::vector<Vec> samples;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 4.0);
  for (int k = 0; k < 50; ++k) samples.push_back(vec2(unif(rng), 0.0));
  ShiftCheckReport rep = check_shift_condition(s.base, s.fam, samples, 64);
  CHECK(rep.pass);
  CHECK(rep.checked == 50);
  CHECK(rep.no_foot == 0);
  CHECK(rep.violations == 0);
  CHECK(rep.slack > 0);  // auto allowance from the sigma spacing
}

TEST_CASE("shift condition flags resolvers that miss the maximum") {
  SlideSetup s = make_slide();
  s.fam.resolver = [](const Vec&) { return std::vector<double>{0.0}; };  // wrong foot
  std::vector<Vec> samples{vec2(2.3, 0.0)};
  ShiftCheckReport rep = check_shift_condition(s.base, s.fam, samples, 128, 0.0);
  CHECK_FALSE(rep.pass);
  CHECK(rep.violations == 1);
  // grid best ~ 0 versus the bad foot's -(1.3)^2
  CHECK(rep.worst_violation == Catch::Approx(1.69).margin(1e-2));
  CHECK(rep.worst_x.isApprox(samples[0]));

  s.fam.resolver = [](const Vec&) { return std::vector<double>{}; };
  rep = check_shift_condition(s.base, s.fam, samples, 64);
  CHECK(rep.no_foot == 1);
  CHECK(rep.checked == 0);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("polyline frame geometry") {
  // L-shaped chain: along +x then +y, obstacle on the left of traversal
  std::vector<Vec2> verts{Vec2(0, 0), Vec2(2, 0), Vec2(2, 2)};
  PolylineFrame f = PolylineFrame::build(verts);
  REQUIRE(f.edges.size() == 2);
  REQUIRE(f.corners.size() == 1);
  CHECK(f.edges[0].phi == Catch::Approx(-kPi / 2));
  CHECK(f.edges[0].length == Catch::Approx(2.0));
  CHECK(f.corners[0].turn == Catch::Approx(kPi / 2));
  CHECK(f.corners[0].offset == Catch::Approx(2.0));
  CHECK(f.edges[1].phi == Catch::Approx(0.0).margin(1e-15));
  CHECK(f.edges[1].offset == Catch::Approx(2.0 + kPi / 2));
  CHECK(f.total == Catch::Approx(4.0 + kPi / 2));

  Vec2 pt;
  double phi = 0;
  f.frame_at(1.0, pt, phi);
  CHECK(pt.isApprox(Vec2(1, 0)));
  CHECK(phi == Catch::Approx(-kPi / 2));
  f.frame_at(2.0 + kPi / 4, pt, phi);  // middle of the corner arc
  CHECK(pt.isApprox(Vec2(2, 0)));
  CHECK(phi == Catch::Approx(-kPi / 4));
  f.frame_at(3.0 + kPi / 2, pt, phi);
  CHECK(pt.isApprox(Vec2(2, 1)));
  CHECK(phi == Catch::Approx(0.0).margin(1e-15));
  f.frame_at(-1.0, pt, phi);  // clamped to the chain ends
  CHECK(pt.isApprox(Vec2(0, 0)));
  f.frame_at(100.0, pt, phi);
  CHECK(pt.isApprox(Vec2(2, 2)));
}

TEST_CASE("polyline feet cover edges, corner arcs, and the chain ends") {
  std::vector<Vec2> verts{Vec2(0, 0), Vec2(2, 0), Vec2(2, 2)};
  PolylineFrame f = PolylineFrame::build(verts);

  // The chain endpoints are always candidates (boundary maxima of the open
  // parameter interval); interior feet slot in between, in sorted order.
  auto feet = f.feet(Vec2(1, -1));  // perpendicular drop onto edge 0
  REQUIRE(feet.size() == 3);
  CHECK(feet[0] == 0.0);
  CHECK(feet[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(feet[2] == Catch::Approx(f.total));

  feet = f.feet(Vec2(3, 1));  // perpendicular drop onto edge 1
  REQUIRE(feet.size() == 3);
  CHECK(feet[1] == Catch::Approx(3.0 + kPi / 2).margin(1e-12));

  // [DERIVED] direction atan2(-0.5, 1) from the pivot lies inside the corner
  // sector, wrap(atan2(-0.5,1) + pi/2) = 1.1071487177940904
  feet = f.feet(Vec2(3, -0.5));
  REQUIRE(feet.size() == 3);
  CHECK(feet[1] == Catch::Approx(2.0 + 1.1071487177940904).margin(1e-12));

  feet = f.feet(Vec2(3, 3));  // past the final vertex: ends only
  REQUIRE(feet.size() == 2);
  CHECK(feet[0] == 0.0);
  CHECK(feet[1] == Catch::Approx(f.total));
  feet = f.feet(Vec2(-2, -1));  // before the first vertex
  REQUIRE(feet.size() == 2);
  CHECK(feet[0] == 0.0);
  CHECK(feet[1] == Catch::Approx(f.total));
}

TEST_CASE("polyline construction rejects malformed chains") {
  CHECK_THROWS_MATCHES(PolylineFrame::build({Vec2(0, 0)}), Error,
                       ErrorCodeIs(Err::BadShapeParam));
  CHECK_THROWS_MATCHES(PolylineFrame::build({Vec2(0, 0), Vec2(0, 0), Vec2(1, 0)}), Error,
                       ErrorCodeIs(Err::BadShapeParam));
  // right turn = concave on the obstacle side
  CHECK_THROWS_MATCHES(PolylineFrame::build({Vec2(0, 0), Vec2(2, 0), Vec2(4, -1)}), Error,
                       ErrorCodeIs(Err::BadShapeParam));
}

TEST_CASE("polyline shift is rigid: identity at zero, rotation past corners") {
  std::vector<Vec2> verts{Vec2(0, 0), Vec2(2, 0), Vec2(2, 2)};
  PolylineFrame f = PolylineFrame::build(verts);
  ParamDiffeo D = make_polyline_shift(f, 3);

  Vec x(3);
  x << 0.7, -0.3, 0.2;
  Vec p(1);
  p << 0.0;
  CHECK(D.apply(x, p).isApprox(x, 1e-12));

  p << 1.0;  // slide along the first edge: pure translation
  Vec y = D.apply(x, p);
  CHECK(y[0] == Catch::Approx(-0.3));
  CHECK(y[1] == Catch::Approx(-0.3));
  CHECK(y[2] == Catch::Approx(0.2));

  p << 2.0 + kPi / 2;  // full corner turn: rotate by -pi/2 about the pivot
  Vec x2(3);
  x2 << 3.0, 1.0, 0.4;
  y = D.apply(x2, p);
  CHECK(y[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(y[1] == Catch::Approx(-1.0).margin(1e-12));
  CHECK(y[2] == Catch::Approx(0.4 - kPi / 2).margin(1e-12));

  Mat J = D.jacobian(x2, p);
  CHECK(J.topLeftCorner<2, 2>().isApprox(rot2(-kPi / 2), 1e-12));
  CHECK(J(2, 2) == 1.0);

  p << 2.0 + kPi / 4;  // mid-corner round trip
  CHECK(D.inverse(D.apply(x2, p), p).isApprox(x2, 1e-12));
}

TEST_CASE("pipeline on the circle-degenerate ellipse recovers signed distance") {
  // [DERIVED] a = b = 2: the base problem's value is the frame distance (exact
  // for the single integrator), the feet are polar, so B(x) = |x| - 2
  PipelineSpec spec;
  spec.kind = "ellipse";
  spec.shape = {{"a", 2.0}, {"b", 2.0}};
  spec.system = make_named_system("single_integrator");
  spec.horizon.T = 3.0;
  spec.horizon.n_segments = 6;
  spec.horizon.substeps = 2;
  spec.optimizer.n_iterations = 10;
  spec.optimizer.population_size = 24;
  spec.optimizer.n_restarts = 1;
  spec.optimizer.rng_seed = 5;
  spec.base_axes = {{"d", -2.5, 5.5, 17}, {"tau", 0.0, 0.0, 1}};
  spec.out_axes = {{"x", -5.0, 5.0, 11}, {"y", -5.0, 5.0, 11}};
  spec.options.n_sigma = 64;
  spec.options.n_check_samples = 40;
  spec.options.n_mc = 500;
  spec.options.workers = 1;
  spec.options.seed = 17;

  PipelineResult res = run_pipeline(spec);
  CHECK(res.shift_ok);
  CHECK(res.shift.violations == 0);
  CHECK(res.conservative_ok);
  CHECK(res.report["out_failures"] == 0);
  CHECK(res.report["mc_violations"] == 0);
  CHECK(res.report["mc_worst_h_on_C"].get<double>() >= -1e-9);
  CHECK(res.out.metadata["pipeline"]["kind"] == "ellipse");
  CHECK(res.out.metadata["pipeline"]["base_cells"] == 17);

  auto at = [&](double X, double Y) { return res.out.interpolate(vec2(X, Y)); };
  CHECK(at(3, 4) == Catch::Approx(3.0).margin(1e-6));
  CHECK(at(0, 2) == Catch::Approx(0.0).margin(1e-6));
  CHECK(at(0, 0) == Catch::Approx(-2.0).margin(1e-6));
  CHECK(at(-5, 0) == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("pipeline on a quarter-turn corner yields the pivot distance fan") {
  // [DERIVED] edges x >= 0 and y >= 0 meeting at the origin: B equals the
  // rotated half-plane maximum, i.e. |x| in the first quadrant fan and
  // max(x, y) elsewhere
  PipelineSpec spec;
  spec.kind = "corner";
  spec.shape = {{"p0x", 0.0}, {"p0y", 0.0}, {"phi1", 0.0}, {"phi2", kPi / 2}};
  spec.system = make_named_system("single_integrator");
  spec.horizon.T = 3.0;
  spec.horizon.n_segments = 6;
  spec.horizon.substeps = 2;
  spec.optimizer.n_iterations = 10;
  spec.optimizer.population_size = 24;
  spec.optimizer.n_restarts = 1;
  spec.optimizer.rng_seed = 5;
  spec.base_axes = {{"d", -3.0, 3.0, 13}, {"tau", 0.0, 0.0, 1}};
  spec.out_axes = {{"x", -2.0, 2.0, 9}, {"y", -2.0, 2.0, 9}};
  spec.options.n_sigma = 64;
  spec.options.n_check_samples = 40;
  spec.options.n_mc = 400;
  spec.options.workers = 1;
  spec.options.seed = 23;

  PipelineResult res = run_pipeline(spec);
  CHECK(res.shift_ok);
  CHECK(res.conservative_ok);
  CHECK(res.report["out_failures"] == 0);

  auto at = [&](double X, double Y) { return res.out.interpolate(vec2(X, Y)); };
  CHECK(at(1, 1) == Catch::Approx(std::sqrt(2.0)).margin(1e-6));
  CHECK(at(-1, 1.5) == Catch::Approx(1.5).margin(1e-6));
  CHECK(at(-1, -1) == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("pipeline on a convex polyline blends edge and corner shifts") {
  PipelineSpec spec;
  spec.kind = "convex_polyline";
  spec.vertices = {Vec2(0, 0), Vec2(2, 0), Vec2(2, 2)};
  spec.system = make_named_system("single_integrator");
  spec.horizon.T = 4.0;
  spec.horizon.n_segments = 8;
  spec.horizon.substeps = 2;
  spec.optimizer.n_iterations = 10;
  spec.optimizer.population_size = 24;
  spec.optimizer.n_restarts = 1;
  spec.optimizer.rng_seed = 5;
  spec.base_axes = {{"d", -3.5, 3.5, 15}, {"tau", 0.0, 0.0, 1}};
  spec.out_axes = {{"x", -1.0, 4.0, 11}, {"y", -2.0, 3.0, 11}};
  spec.options.n_sigma = 64;
  spec.options.n_check_samples = 40;
  spec.options.n_mc = 400;
  spec.options.workers = 1;
  spec.options.seed = 29;

  PipelineResult res = run_pipeline(spec);
  CHECK(res.shift_ok);
  CHECK(res.conservative_ok);
  CHECK(res.report["out_failures"] == 0);
  CHECK(res.out.metadata["pipeline"]["kind"] == "convex_polyline");

  auto at = [&](double X, double Y) { return res.out.interpolate(vec2(X, Y)); };
  CHECK(at(3, 1) == Catch::Approx(1.0).margin(1e-6));    // edge-1 drop
  CHECK(at(1, -1) == Catch::Approx(1.0).margin(1e-6));   // edge-0 drop
  CHECK(at(1, 0.5) == Catch::Approx(-0.5).margin(1e-6));  // inside the obstacle
}

TEST_CASE("pipeline specs are validated before any solving") {
  PipelineSpec spec;
  spec.kind = "does_not_exist";
  spec.system = make_named_system("single_integrator");
  CHECK_THROWS_MATCHES(run_pipeline(spec), Error, ErrorCodeIs(Err::BadParam));

  spec.kind = "ellipse";
  spec.shape = {{"b", 1.0}};  // missing a
  CHECK_THROWS_MATCHES(run_pipeline(spec), Error, ErrorCodeIs(Err::MissingParam));

  spec.kind = "corner";
  spec.shape = {{"p0x", 0.0}, {"p0y", 0.0}, {"phi1", 0.0}, {"phi2", kPi / 2}};
  spec.base_axes = {{"d", -3.0, 3.0, 13}, {"tau", -1.0, 1.0, 3}};
  spec.out_axes = {{"x", -2.0, 2.0, 9}, {"y", -2.0, 2.0, 9}};
  CHECK_THROWS_MATCHES(run_pipeline(spec), Error, ErrorCodeIs(Err::BadGrid));

  spec.shape["phi2"] = -0.1;  // negative turn
  CHECK_THROWS_MATCHES(run_pipeline(spec), Error, ErrorCodeIs(Err::BadShapeParam));
}
