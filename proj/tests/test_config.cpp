#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "eqcbf/config.hpp"
#include "matchers.hpp"

using namespace eqcbf;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("numbers accept a trailing pi factor") {
  CHECK(parse_number("2") == 2.0);
  CHECK(parse_number(" -3.25 ") == -3.25);
  CHECK(parse_number("1e-3") == Catch::Approx(0.001));
  CHECK(parse_number("pi") == Catch::Approx(kPi).margin(1e-15));
  CHECK(parse_number("-pi") == Catch::Approx(-kPi).margin(1e-15));
  CHECK(parse_number("0.5pi") == Catch::Approx(0.5 * kPi).margin(1e-15));
  CHECK(parse_number("2 pi") == Catch::Approx(2.0 * kPi).margin(1e-15));
  CHECK_THROWS_MATCHES(parse_number(""), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_number("abc"), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_number("1.5x"), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("config parses sections, comments, and repeated keys") {
  Config cfg = Config::parse_string(
      "top = 1        # trailing comment\n"
      "; full-line comment\n"
      "[grid]\n"
      "axis = x:-2:2:21\n"
      "axis = y:-2:2:21\n"
      "\n"
      "[optimizer]\n"
      "rng_seed = 7\n"
      "verbose = yes\n");
  CHECK(cfg.has_section("grid"));
  CHECK(cfg.has("", "top"));
  CHECK(cfg.get_num("", "top", 0) == 1.0);
  CHECK(cfg.get_all("grid", "axis").size() == 2);
  CHECK(cfg.get_all("grid", "axis")[1] == "y:-2:2:21");
  CHECK(cfg.get_int("optimizer", "rng_seed", 0) == 7);
  CHECK(cfg.get_bool("optimizer", "verbose", false));
  CHECK(cfg.get_str("optimizer", "missing", "dflt") == "dflt");
  CHECK(cfg.get_num("optimizer", "missing", -2.5) == -2.5);
  CHECK(!cfg.get("nowhere", "nothing").has_value());
  CHECK_THROWS_MATCHES(cfg.require_str("optimizer", "missing"), Error,
                       ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("config rejects malformed lines") {
  CHECK_THROWS_MATCHES(Config::parse_string("[grid\naxis = x:0:1:2\n"), Error,
                       ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(Config::parse_string("just a bare line\n"), Error,
                       ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(Config::parse_string("= value without key\n"), Error,
                       ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("booleans accept the usual spellings") {
  Config cfg = Config::parse_string("[s]\na = on\nb = off\nc = garbage\n");
  CHECK(cfg.get_bool("s", "a", false));
  CHECK(!cfg.get_bool("s", "b", true));
  CHECK_THROWS_MATCHES(cfg.get_bool("s", "c", false), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("overrides land in the dotted section and replace existing keys") {
  Config cfg = Config::parse_string("[optimizer]\nrng_seed = 7\n");
  cfg.apply_override("optimizer.rng_seed=42");
  CHECK(cfg.get_int("optimizer", "rng_seed", 0) == 42);
  cfg.apply_override("horizon.T=2.5");
  CHECK(cfg.get_num("horizon", "T", 0) == 2.5);
  cfg.apply_override("workers=4");
  CHECK(cfg.get_int("", "workers", 0) == 4);
  CHECK_THROWS_MATCHES(cfg.apply_override("no-equals-sign"), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("numeric params forward a section minus excluded keys") {
  Config cfg = Config::parse_string("[constraint]\nkind = ellipse\na = 2\nb = 1\ncx = 0.5\n");
  auto p = cfg.numeric_params("constraint", {"kind"});
  CHECK(p.size() == 3);
  CHECK(p.at("a") == 2.0);
  CHECK(p.at("cx") == 0.5);
  CHECK(cfg.numeric_params("missing_section").empty());
}

TEST_CASE("axis strings parse bounds, counts, and periodicity") {
  GridAxis a = parse_axis("x:-2:2:41");
  CHECK(a.name == "x");
  CHECK(a.lo == -2.0);
  CHECK(a.hi == 2.0);
  CHECK(a.count == 41);
  CHECK(!a.periodic);

  GridAxis th = parse_axis("theta:-pi:pi:25:periodic");
  CHECK(th.periodic);
  CHECK(th.period == Catch::Approx(2 * kPi).margin(1e-12));

  GridAxis s = parse_axis("s:0:9:10:periodic:10");
  CHECK(s.period == 10.0);

  CHECK_THROWS_MATCHES(parse_axis("x:0:1"), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_axis("x:0:1:5:wrapped"), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_axis("x:1:0:5"), Error, ErrorCodeIs(Err::BadGrid));
}

TEST_CASE("matrix strings parse rows and entries") {
  Mat M = parse_matrix("1 2; 3 -4");
  REQUIRE(M.rows() == 2);
  REQUIRE(M.cols() == 2);
  CHECK(M(0, 1) == 2.0);
  CHECK(M(1, 1) == -4.0);

  Mat R = parse_matrix("0.5pi 0 1");
  REQUIRE(R.rows() == 1);
  REQUIRE(R.cols() == 3);
  CHECK(R(0, 0) == Catch::Approx(0.5 * kPi).margin(1e-15));

  CHECK_THROWS_MATCHES(parse_matrix("1 2; 3"), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_matrix("  "), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("inline specs split a kind and key=value params") {
  auto [kind, params] = parse_inline_spec("circle cx=0 cy=-1 r=1.5");
  CHECK(kind == "circle");
  CHECK(params.size() == 3);
  CHECK(params.at("cy") == -1.0);
  CHECK(params.at("r") == 1.5);

  auto [bare, none] = parse_inline_spec("pendulum");
  CHECK(bare == "pendulum");
  CHECK(none.empty());

  CHECK_THROWS_MATCHES(parse_inline_spec("circle r"), Error, ErrorCodeIs(Err::BadConfig));
  CHECK_THROWS_MATCHES(parse_inline_spec("   "), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("system builder prefers the one-line form") {
  Config inline_cfg = Config::parse_string(
      "system = single_integrator u_max=2\n"
      "[system]\n"
      "name = pendulum\n");
  ControlSystem sys = build_system(inline_cfg);
  CHECK(sys.name == "single_integrator");
  CHECK(sys.input_set.kind == InputSet::Kind::Ball);
  CHECK(sys.input_set.radius == 2.0);

  Config section_cfg = Config::parse_string("[system]\nname = single_integrator\ndim = 3\n");
  CHECK(build_system(section_cfg).state_dim == 3);

  CHECK_THROWS_MATCHES(build_system(Config::parse_string("")), Error,
                       ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("constraint builder handles inline, section, and combined forms") {
  Config inline_cfg = Config::parse_string(
      "constraint = circle r=2\n"
      "[constraint]\n"
      "kind = ellipse\na = 3\nb = 1\n");
  ConstraintFunction c = build_constraint(inline_cfg);
  CHECK(c.kind == "circle");
  CHECK(c.h(vec2(3, 0)) == Catch::Approx(1.0).margin(1e-12));

  Config section_cfg = Config::parse_string("[constraint]\nkind = ellipse\na = 2\nb = 1\n");
  CHECK(build_constraint(section_cfg).kind == "ellipse");

  // [DERIVED] max-combination of two unit circles at +-1: at (1,0) the right
  // part gives distance 0 - 1 = -1 and the left gives 2 - 1 = 1, so max is 1
  Config combo = Config::parse_string(
      "[constraint]\n"
      "kind = custom_maxmin\n"
      "op = max\n"
      "part = circle cx=-1 r=1\n"
      "part = circle cx=1 r=1\n");
  ConstraintFunction cc = build_constraint(combo);
  CHECK(cc.kind == "custom_maxmin");
  CHECK(cc.h(vec2(1, 0)) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cc.h(vec2(0, 0)) == Catch::Approx(0.0).margin(1e-12));

  CHECK_THROWS_MATCHES(
      build_constraint(Config::parse_string("[constraint]\nkind = custom_maxmin\n")), Error,
      ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("horizon builder fills defaults and resolves auto entries") {
  ControlSystem sys = make_named_system("single_integrator");
  ConstraintFunction c = make_constraint("circle", {{"r", 1.0}});

  HorizonSpec h = build_horizon(Config::parse_string(""), sys, c);
  CHECK(h.T == 1.0);
  CHECK(h.n_segments == 20);
  CHECK(h.substeps == 4);
  CHECK(h.terminal.delta == Catch::Approx(0.5));
  CHECK(h.resolved_gamma() == Catch::Approx(0.25));

  Config cfg = Config::parse_string("[horizon]\nT = 2\ngamma = 0.1\ndelta = 0.3\nn_segments = 8\n");
  HorizonSpec h2 = build_horizon(cfg, sys, c);
  CHECK(h2.T == 2.0);
  CHECK(h2.n_segments == 8);
  CHECK(h2.resolved_gamma() == Catch::Approx(0.1));
  CHECK(h2.terminal.delta == Catch::Approx(0.3));
}

TEST_CASE("optimizer builder applies overrides and validates") {
  Config cfg = Config::parse_string(
      "[optimizer]\nn_iterations = 9\npopulation_size = 48\nrng_seed = 17\n");
  OptimizerConfig o = build_optimizer(cfg);
  CHECK(o.n_iterations == 9);
  CHECK(o.population_size == 48);
  CHECK(o.rng_seed == 17);

  CHECK_THROWS_AS(build_optimizer(Config::parse_string("[optimizer]\nelite_fraction = 2\n")),
                  Error);
}

TEST_CASE("axis builder requires at least one axis line") {
  Config cfg = Config::parse_string("[grid]\naxis = x:0:1:5\naxis = y:0:1:4\n");
  auto axes = build_axes(cfg, "grid");
  REQUIRE(axes.size() == 2);
  CHECK(axes[1].count == 4);
  CHECK_THROWS_MATCHES(build_axes(cfg, "base_grid"), Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("pipeline builder assembles the full specification") {
  Config cfg = Config::parse_string(
      "system = single_integrator\n"
      "[pipeline]\n"
      "kind = convex_polyline\n"
      "vertex = 0 0\n"
      "vertex = 2 0\n"
      "vertex = 2 2\n"
      "n_sigma = 48\n"
      "strict_shift = false\n"
      "seed = 5\n"
      "[horizon]\n"
      "T = 3\n"
      "[optimizer]\n"
      "n_iterations = 6\n"
      "[base_grid]\n"
      "axis = d:-2.5:4:14\n"
      "axis = along:0:0:1\n"
      "[grid]\n"
      "axis = x:-4:4:17\n"
      "axis = y:-4:4:17\n");
  PipelineSpec spec = build_pipeline(cfg);
  CHECK(spec.kind == "convex_polyline");
  REQUIRE(spec.vertices.size() == 3);
  CHECK(spec.vertices[1][0] == 2.0);
  CHECK(spec.vertices[2][1] == 2.0);
  CHECK(spec.shape.empty());  // list/control keys are excluded from shape params
  CHECK(spec.system.name == "single_integrator");
  CHECK(spec.horizon.T == 3.0);
  CHECK(spec.optimizer.n_iterations == 6);
  REQUIRE(spec.base_axes.size() == 2);
  CHECK(spec.base_axes[1].count == 1);
  CHECK(spec.out_axes[0].count == 17);
  CHECK(spec.options.n_sigma == 48);
  CHECK(!spec.options.strict_shift);
  CHECK(spec.options.seed == 5);

  CHECK_THROWS_MATCHES(build_pipeline(Config::parse_string("[pipeline]\nkind = ellipse\n"
                                                           "vertex = 1\n")),
                       Error, ErrorCodeIs(Err::BadConfig));
}

TEST_CASE("config files load from disk and report missing paths") {
  std::string path = "eqcbf_test_config_tmp.ini";
  {
    std::ofstream os(path);
    os << "[horizon]\nT = 4\n";
  }
  Config cfg = Config::parse_file(path);
  CHECK(cfg.get_num("horizon", "T", 0) == 4.0);
  std::remove(path.c_str());
  CHECK_THROWS_MATCHES(Config::parse_file("definitely_not_here.ini"), Error,
                       ErrorCodeIs(Err::BadConfig));
}
