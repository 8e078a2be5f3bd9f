#include <functional>
#include <iostream>

#include "CLI11.hpp"

#include "eqcbf/config.hpp"
#include "eqcbf/verify.hpp"

using namespace eqcbf;

namespace {

int classify_error(const Error& e) {
  switch (e.code()) {
    case Err::BadConfig:
    case Err::BadParam:
    case Err::MissingParam:
    case Err::BadShapeParam:
    case Err::UnknownSystem:
    case Err::UnknownTransform:
    case Err::BadGrid:
    case Err::DimMismatch:
    case Err::EmptyRegion:
    case Err::EmptyParamSet:
    case Err::NoUnitEigenvalue:
    case Err::NotSupporting:
      return 2;  // bad input
    case Err::ShiftConditionFailed:
    case Err::ConservativenessViolated:
    case Err::ChartInvariantViolated:
    case Err::NoSafeInput:
      return 1;  // verification produced a negative result
    default:
      return 3;  // runtime/I-O failure
  }
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = Config::parse_file(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

void write_timings_sidecar(const std::string& grid_path, const SynthStats& stats, int workers) {
  ordered_json j;
  j["seconds"] = stats.seconds;
  j["points"] = stats.points;
  j["failures"] = stats.failures;
  j["skipped"] = stats.skipped;
  j["evaluations"] = stats.evaluations;
  j["workers"] = workers;
  std::ofstream os(grid_path + ".timings.json");
  os << j.dump(2) << "\n";
}

Vec parse_state(const std::string& text) {
  std::istringstream is(text);
  std::vector<double> vals;
  std::string tok;
  while (is >> tok) vals.push_back(parse_number(tok));
  Vec x(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) x[static_cast<int>(i)] = vals[i];
  return x;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int workers = 0;
};

void add_common(CLI::App* sub, CommonArgs& args, bool config_required = true) {
  auto* opt = sub->add_option("-c,--config", args.config_path, "config file");
  if (config_required) opt->required();
  sub->add_option("--set", args.overrides, "override: section.key=value (repeatable)");
  sub->add_option("-w,--workers", args.workers,
                  "worker threads (0: EQCBF_WORKERS or hardware)");
}

// --------------------------------------------------------------------------

int cmd_synth_direct(const CommonArgs& args, const std::string& out_path) {
  Config cfg = load_config(args.config_path, args.overrides);
  ControlSystem sys = build_system(cfg);
  ConstraintFunction c = build_constraint(cfg);
  HorizonSpec horizon = build_horizon(cfg, sys, c);
  OptimizerConfig opt = build_optimizer(cfg);
  std::vector<GridAxis> axes = build_axes(cfg, "grid");
  int workers = resolve_workers(args.workers);
  SynthStats stats;
  ValueGrid g = compute_grid(sys, c, horizon, opt, axes, workers, nullptr, &stats);
  g.metadata["command"] = "synth-direct";
  save_grid(g, out_path);
  write_timings_sidecar(out_path, stats, workers);
  std::cout << "synth-direct: " << stats.points << " points, " << stats.failures
            << " failures, " << stats.seconds << " s -> " << out_path << "\n";
  return 0;
}

int cmd_synth_sym(const CommonArgs& args, const std::string& out_path,
                  const std::string& m_out_path) {
  Config cfg = load_config(args.config_path, args.overrides);
  ControlSystem sys = build_system(cfg);
  ConstraintFunction c = build_constraint(cfg);
  HorizonSpec horizon = build_horizon(cfg, sys, c);
  OptimizerConfig opt = build_optimizer(cfg);
  ChartConfig cc = build_chart_config(cfg);
  std::vector<GridAxis> full_axes = build_axes(cfg, "grid");
  int workers = resolve_workers(args.workers);

  std::function<bool(const Vec&)> mask;
  if (cc.name == "linear_eigen") {
    Mat Pinv = cc.P.inverse();
    int free_idx = static_cast<int>(cc.params.count("free_index") ? cc.params.at("free_index")
                                                                  : 1.0);
    double margin = 0;
    for (int j = 0; j < Pinv.cols(); ++j)
      margin += std::abs(Pinv(free_idx, j)) * cc.m_axes[j].step();
    mask = chart_m_mask(cc.name, cc.params, cc.P, 2.0 * margin);
  }

  SynthStats m_stats;
  ValueGrid m_grid =
      compute_grid(sys, c, horizon, opt, cc.m_axes, workers, mask, &m_stats);
  SymmetryChart chart = build_chart_named(cc.name, std::move(m_grid), cc.params, cc.P);

  Vec lo(full_axes.size()), hi(full_axes.size());
  for (std::size_t i = 0; i < full_axes.size(); ++i) {
    lo[static_cast<int>(i)] = full_axes[i].lo;
    hi[static_cast<int>(i)] = full_axes[i].hi;
  }
  verify_chart(chart, lo, hi, 5000, 2024);

  SynthStats i_stats;
  ValueGrid full = infer_full_grid(chart, full_axes, workers, &i_stats);
  full.metadata["command"] = "synth-sym";
  save_grid(full, out_path);
  SynthStats total = m_stats;
  total.points += i_stats.points;
  total.failures += i_stats.failures;
  total.seconds += i_stats.seconds;
  write_timings_sidecar(out_path, total, workers);
  if (!m_out_path.empty()) {
    save_grid(chart.grid(), m_out_path);
    write_timings_sidecar(m_out_path, m_stats, workers);
  }
  std::cout << "synth-sym: " << chart.grid().size() << " explicit cells -> " << full.size()
            << " total (" << total.seconds << " s) -> " << out_path << "\n";
  return 0;
}

int cmd_synth_equi(const CommonArgs& args, const std::string& out_path,
                   const std::string& base_out_path, const std::string& report_path) {
  Config cfg = load_config(args.config_path, args.overrides);
  PipelineSpec spec = build_pipeline(cfg);
  spec.options.workers = resolve_workers(args.workers);
  PipelineResult res = run_pipeline(spec);
  res.out.metadata["command"] = "synth-equi";
  save_grid(res.out, out_path);
  SynthStats stats;
  stats.points = res.out.size();
  write_timings_sidecar(out_path, stats, spec.options.workers);
  if (!base_out_path.empty()) save_grid(res.base_grid, base_out_path);
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    os << res.report.dump(2) << "\n";
  }
  std::cout << "synth-equi: shift check "
            << (res.shift_ok ? "passed" : "FAILED (non-strict mode)") << ", containment "
            << (res.conservative_ok ? "passed" : "FAILED") << " -> " << out_path << "\n";
  return res.shift_ok && res.conservative_ok ? 0 : 1;
}

int cmd_check(const CommonArgs& args, const std::string& grid_path, double band, double alpha,
              int n_states, double min_fraction) {
  Config cfg = load_config(args.config_path, args.overrides);
  ControlSystem sys = build_system(cfg);
  if (!grid_path.empty()) {
    ValueGrid g = load_grid(grid_path);
    CbfCheckOptions opt;
    opt.band = band;
    opt.alpha_k = alpha;
    opt.n_states = n_states;
    CbfCheckReport rep = check_cbf_condition(g, sys, opt);
    std::cout << "cbf-condition: " << rep.passed << "/" << rep.checked << " passed (fraction "
              << rep.fraction << ", worst margin " << rep.worst_margin << ", skipped "
              << rep.skipped << ")\n";
    return rep.fraction >= min_fraction ? 0 : 1;
  }
  // Transform certification mode.
  ParamDiffeo D = build_transform(cfg);
  std::vector<GridAxis> axes = build_axes(cfg, "grid");
  CheckConfig cc;
  cc.lo = Vec(axes.size());
  cc.hi = Vec(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    cc.lo[static_cast<int>(i)] = axes[i].lo;
    cc.hi[static_cast<int>(i)] = axes[i].hi;
  }
  CheckReport eq = check_equivariance(sys, D, cc);
  std::cout << "equivariance: max residual " << eq.max_residual << " over " << eq.samples
            << " samples, " << (eq.strong ? "strong" : "not strong") << ", "
            << (eq.pass ? "pass" : "FAIL") << "\n";
  bool ok = eq.pass;
  if (cfg.has_section("constraint") || cfg.has("", "constraint")) {
    ConstraintFunction c = build_constraint(cfg);
    CheckReport sym = check_symmetry(c, D, cc);
    std::cout << "symmetry: max residual " << sym.max_residual << " over " << sym.samples
              << " samples, " << (sym.pass ? "pass" : "FAIL") << "\n";
    ok = ok && sym.pass;
  }
  return ok ? 0 : 1;
}

int cmd_compare(const std::string& path_a, const std::string& path_b, double tol,
                bool require_identical) {
  ValueGrid a = load_grid(path_a);
  ValueGrid b = load_grid(path_b);
  GridComparison r = compare_grids(a, b);
  if (!r.same_shape) {
    std::cout << "compare: grids have different shapes\n";
    return 1;
  }
  std::cout << "compare: max |diff| " << r.max_abs_diff << ", mean |diff| " << r.mean_abs_diff
            << ", nan mismatches " << r.nan_mismatches << ", provenance mismatches "
            << r.provenance_mismatches << ", bitwise "
            << (r.identical_bytes ? "identical" : "different") << "\n";
  if (require_identical) return r.identical_bytes && r.nan_mismatches == 0 ? 0 : 1;
  return r.max_abs_diff <= tol && r.nan_mismatches == 0 ? 0 : 1;
}

int cmd_bench(const CommonArgs& args, const std::string& out_path) {
  Config cfg = load_config(args.config_path, args.overrides);
  ControlSystem sys = build_system(cfg);
  ConstraintFunction c = build_constraint(cfg);
  HorizonSpec horizon = build_horizon(cfg, sys, c);
  OptimizerConfig opt = build_optimizer(cfg);
  std::vector<GridAxis> full_axes = build_axes(cfg, "grid");
  int workers = resolve_workers(args.workers);

  SynthStats direct_stats;
  compute_grid(sys, c, horizon, opt, full_axes, workers, nullptr, &direct_stats);
  std::cout << "bench direct: " << direct_stats.points << " solves in " << direct_stats.seconds
            << " s\n";
  ordered_json j;
  j["direct_points"] = direct_stats.points;
  j["direct_seconds"] = direct_stats.seconds;

  if (cfg.has_section("chart")) {
    ChartConfig cc = build_chart_config(cfg);
    SynthStats m_stats;
    ValueGrid m_grid = compute_grid(sys, c, horizon, opt, cc.m_axes, workers, nullptr, &m_stats);
    SymmetryChart chart = build_chart_named(cc.name, std::move(m_grid), cc.params, cc.P);
    SynthStats i_stats;
    infer_full_grid(chart, full_axes, workers, &i_stats);
    double sym_seconds = m_stats.seconds + i_stats.seconds;
    std::cout << "bench chart: " << m_stats.points << " solves + inference in " << sym_seconds
              << " s (" << sym_seconds / std::max(direct_stats.seconds, 1e-12)
              << "x of direct)\n";
    j["chart_points"] = m_stats.points;
    j["chart_seconds"] = sym_seconds;
    j["ratio"] = sym_seconds / std::max(direct_stats.seconds, 1e-12);
  }
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_export(const std::string& grid_path, const std::string& out_path,
               const std::vector<std::string>& fixes) {
  ValueGrid g = load_grid(grid_path);
  std::map<int, int> fixed;
  for (const std::string& f : fixes) {
    auto eq = f.find('=');
    if (eq == std::string::npos)
      throw Error(Err::BadParam, "--fix expects axis=index, got '" + f + "'");
    std::string name = trim(f.substr(0, eq));
    int index = static_cast<int>(std::llround(parse_number(f.substr(eq + 1))));
    int axis = -1;
    for (int i = 0; i < g.ndim(); ++i)
      if (g.axes[i].name == name) axis = i;
    if (axis < 0) throw Error(Err::BadParam, "grid has no axis named '" + name + "'");
    if (index < 0 || index >= g.axes[axis].count)
      throw Error(Err::BadParam, "--fix index out of range for axis '" + name + "'");
    fixed[axis] = index;
  }
  std::ofstream os(out_path);
  if (!os) throw Error(Err::BadParam, "cannot open '" + out_path + "'");
  export_csv(g, os, fixed);
  std::cout << "export: wrote " << out_path << "\n";
  return 0;
}

int cmd_simulate(const CommonArgs& args, const std::string& grid_path, const std::string& x0_text,
                 int count, double duration, double dt, double b_min, double h_floor,
                 std::uint64_t seed, const std::string& traj_path) {
  Config cfg = load_config(args.config_path, args.overrides);
  ControlSystem sys = build_system(cfg);
  ConstraintFunction c = build_constraint(cfg);
  ValueGrid g = load_grid(grid_path);

  std::vector<Vec> starts;
  if (!x0_text.empty()) {
    starts.push_back(parse_state(x0_text));
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int guard = 0;
    while (static_cast<int>(starts.size()) < count && guard++ < 100000) {
      Vec x(g.ndim());
      for (int i = 0; i < g.ndim(); ++i) {
        const auto& a = g.axes[i];
        double hi = a.periodic ? a.lo + a.period : a.hi;
        x[i] = a.lo + (hi - a.lo) * unif(rng);
      }
      try {
        if (g.interpolate(x) >= b_min) starts.push_back(x);
      } catch (const Error&) {
      }
    }
    if (starts.empty()) throw Error(Err::EmptyRegion, "no start states with barrier >= b_min");
  }

  double worst_h = std::numeric_limits<double>::infinity();
  std::ofstream traj_os;
  if (!traj_path.empty()) {
    traj_os.open(traj_path);
    traj_os << "run,t";
    for (int i = 0; i < g.ndim(); ++i) traj_os << ',' << g.axes[i].name;
    traj_os << ",h\n";
  }
  for (std::size_t r = 0; r < starts.size(); ++r) {
    SimResult sim = simulate_safe(g, sys, c, starts[r], duration, dt);
    worst_h = std::min(worst_h, sim.min_h);
    if (traj_os.is_open()) {
      for (std::size_t j = 0; j < sim.traj.states.size(); ++j) {
        traj_os << r << ',' << sim.traj.times[j];
        for (int i = 0; i < g.ndim(); ++i) traj_os << ',' << sim.traj.states[j][i];
        traj_os << ',' << c.h(sim.traj.states[j]) << '\n';
      }
    }
  }
  std::cout << "simulate: " << starts.size() << " runs of " << duration << " s, worst min h = "
            << worst_h << "\n";
  return worst_h >= h_floor ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reachability-based control barrier functions with symmetry inference"};
  app.require_subcommand(1);
  std::function<int()> run;

  // synth-direct
  {
    auto* sub = app.add_subcommand("synth-direct", "solve the max-min problem on every grid cell");
    auto args = std::make_shared<CommonArgs>();
    auto out = std::make_shared<std::string>("out.eqcb");
    add_common(sub, *args);
    sub->add_option("-o,--out", *out, "output .eqcb path");
    sub->callback([&run, args, out] { run = [=] { return cmd_synth_direct(*args, *out); }; });
  }
  // synth-sym
  {
    auto* sub = app.add_subcommand(
        "synth-sym", "solve on the chart subset and infer the full grid by symmetry");
    auto args = std::make_shared<CommonArgs>();
    auto out = std::make_shared<std::string>("out.eqcb");
    auto m_out = std::make_shared<std::string>();
    add_common(sub, *args);
    sub->add_option("-o,--out", *out, "output .eqcb path");
    sub->add_option("--m-out", *m_out, "also save the chart subset grid");
    sub->callback(
        [&run, args, out, m_out] { run = [=] { return cmd_synth_sym(*args, *out, *m_out); }; });
  }
  // synth-equi
  {
    auto* sub = app.add_subcommand(
        "synth-equi", "boundary-shift pipeline for non-symmetric constraints");
    auto args = std::make_shared<CommonArgs>();
    auto out = std::make_shared<std::string>("out.eqcb");
    auto base_out = std::make_shared<std::string>();
    auto report = std::make_shared<std::string>();
    add_common(sub, *args);
    sub->add_option("-o,--out", *out, "output .eqcb path");
    sub->add_option("--base-out", *base_out, "also save the half-plane base grid");
    sub->add_option("--report", *report, "write the pipeline report json");
    sub->callback([&run, args, out, base_out, report] {
      run = [=] { return cmd_synth_equi(*args, *out, *base_out, *report); };
    });
  }
  // check
  {
    auto* sub = app.add_subcommand(
        "check", "certify equivariance/symmetry, or the barrier condition of a grid");
    auto args = std::make_shared<CommonArgs>();
    auto grid = std::make_shared<std::string>();
    auto band = std::make_shared<double>(0.5);
    auto alpha = std::make_shared<double>(1.0);
    auto n_states = std::make_shared<int>(400);
    auto min_fraction = std::make_shared<double>(0.99);
    add_common(sub, *args);
    sub->add_option("-g,--grid", *grid, "grid to verify (omit for transform certification)");
    sub->add_option("--band", *band, "zero-level band half-width");
    sub->add_option("--alpha", *alpha, "linear class-K slope");
    sub->add_option("--n-states", *n_states, "band states to sample");
    sub->add_option("--min-fraction", *min_fraction, "required pass fraction");
    sub->callback([&run, args, grid, band, alpha, n_states, min_fraction] {
      run = [=] { return cmd_check(*args, *grid, *band, *alpha, *n_states, *min_fraction); };
    });
  }
  // compare
  {
    auto* sub = app.add_subcommand("compare", "compare two .eqcb grids");
    auto pa = std::make_shared<std::string>();
    auto pb = std::make_shared<std::string>();
    auto tol = std::make_shared<double>(1e-9);
    auto identical = std::make_shared<bool>(false);
    sub->add_option("a", *pa, "first grid")->required();
    sub->add_option("b", *pb, "second grid")->required();
    sub->add_option("--tol", *tol, "max |diff| tolerance");
    sub->add_flag("--require-identical", *identical, "demand bitwise equality");
    sub->callback([&run, pa, pb, tol, identical] {
      run = [=] { return cmd_compare(*pa, *pb, *tol, *identical); };
    });
  }
  // bench
  {
    auto* sub = app.add_subcommand("bench", "time direct synthesis vs chart-based inference");
    auto args = std::make_shared<CommonArgs>();
    auto out = std::make_shared<std::string>();
    add_common(sub, *args);
    sub->add_option("-o,--out", *out, "write timings json");
    sub->callback([&run, args, out] { run = [=] { return cmd_bench(*args, *out); }; });
  }
  // export
  {
    auto* sub = app.add_subcommand("export", "write a grid (or slice) as CSV");
    auto grid = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("out.csv");
    auto fixes = std::make_shared<std::vector<std::string>>();
    sub->add_option("-g,--grid", *grid, "input .eqcb")->required();
    sub->add_option("-o,--out", *out, "output CSV path");
    sub->add_option("--fix", *fixes, "pin an axis: name=index (repeatable)");
    sub->callback(
        [&run, grid, out, fixes] { run = [=] { return cmd_export(*grid, *out, *fixes); }; });
  }
  // simulate
  {
    auto* sub = app.add_subcommand("simulate", "greedy barrier-following rollouts");
    auto args = std::make_shared<CommonArgs>();
    auto grid = std::make_shared<std::string>();
    auto x0 = std::make_shared<std::string>();
    auto count = std::make_shared<int>(10);
    auto duration = std::make_shared<double>(10.0);
    auto dt = std::make_shared<double>(0.05);
    auto b_min = std::make_shared<double>(0.1);
    auto h_floor = std::make_shared<double>(-1e-2);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto traj = std::make_shared<std::string>();
    add_common(sub, *args);
    sub->add_option("-g,--grid", *grid, "barrier grid")->required();
    sub->add_option("--x0", *x0, "single start state, e.g. \"0.5 0 0\"");
    sub->add_option("-n,--count", *count, "number of random starts");
    sub->add_option("--duration", *duration, "rollout length in seconds");
    sub->add_option("--dt", *dt, "controller step");
    sub->add_option("--b-min", *b_min, "minimum barrier value for random starts");
    sub->add_option("--h-floor", *h_floor, "fail when min h drops below this");
    sub->add_option("--seed", *seed, "random start seed");
    sub->add_option("--traj", *traj, "write trajectories CSV");
    sub->callback([&run, args, grid, x0, count, duration, dt, b_min, h_floor, seed, traj] {
      run = [=] {
        return cmd_simulate(*args, *grid, *x0, *count, *duration, *dt, *b_min, *h_floor, *seed,
                            *traj);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run();
  } catch (const Error& e) {
    std::cerr << "error [" << err_name(e.code()) << "]: " << e.what() << "\n";
    return classify_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
