#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "eqcbf/chart.hpp"
#include "eqcbf/common.hpp"
#include "eqcbf/constraints.hpp"
#include "eqcbf/shift_synthesis.hpp"
#include "eqcbf/solver.hpp"
#include "eqcbf/systems.hpp"
#include "eqcbf/transforms.hpp"
#include "eqcbf/value_grid.hpp"

namespace eqcbf {

// ---------------------------------------------------------------------------
// Flat key-value configuration: [section] headers, `key = value` lines,
// `#`/`;` comments, repeated keys allowed (axis/part/vertex lists). Values
// accept a trailing `pi` factor ("0.5pi", "-pi") for angles.

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& raw) {
  std::string s = trim(raw);
  if (s.empty()) throw Error(Err::BadConfig, "empty numeric value");
  double mult = 1.0;
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "pi") == 0) {
    mult = kPi;
    s = trim(s.substr(0, s.size() - 2));
    if (s.empty() || s == "+") s = "1";
    if (s == "-") s = "-1";
  }
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v * mult;
  } catch (const std::exception&) {
    throw Error(Err::BadConfig, "cannot parse number '" + raw + "'");
  }
}

class Config {
 public:
  using Entry = std::pair<std::string, std::string>;

  static Config parse_string(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw Error(Err::BadConfig, "line " + std::to_string(lineno) + ": unterminated section");
        section = trim(line.substr(1, line.size() - 2));
        cfg.sections_[section];
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(Err::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw Error(Err::BadConfig, "line " + std::to_string(lineno) + ": empty key");
      cfg.sections_[section].push_back({key, value});
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Err::BadConfig, "cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_string(buf.str());
  }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  bool has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return false;
    for (const auto& e : it->second)
      if (e.first == key) return true;
    return false;
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return std::nullopt;
    for (const auto& e : it->second)
      if (e.first == key) return e.second;
    return std::nullopt;
  }

  std::vector<std::string> get_all(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    auto it = sections_.find(section);
    if (it == sections_.end()) return out;
    for (const auto& e : it->second)
      if (e.first == key) out.push_back(e.second);
    return out;
  }

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& def) const {
    auto v = get(section, key);
    return v ? *v : def;
  }

  std::string require_str(const std::string& section, const std::string& key) const {
    auto v = get(section, key);
    if (!v) throw Error(Err::BadConfig, "missing [" + section + "] " + key);
    return *v;
  }

  double get_num(const std::string& section, const std::string& key, double def) const {
    auto v = get(section, key);
    return v ? parse_number(*v) : def;
  }

  double require_num(const std::string& section, const std::string& key) const {
    return parse_number(require_str(section, key));
  }

  int get_int(const std::string& section, const std::string& key, int def) const {
    auto v = get(section, key);
    if (!v) return def;
    double d = parse_number(*v);
    return static_cast<int>(std::llround(d));
  }

  bool get_bool(const std::string& section, const std::string& key, bool def) const {
    auto v = get(section, key);
    if (!v) return def;
    std::string s = trim(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error(Err::BadConfig, "bad boolean '" + s + "' for [" + section + "] " + key);
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto& entries = sections_[section];
    for (auto& e : entries)
      if (e.first == key) {
        e.second = value;
        return;
      }
    entries.push_back({key, value});
  }

  // Accepts "section.key=value"; a key with no dot lands in the "" section.
  void apply_override(const std::string& dotted) {
    auto eq = dotted.find('=');
    if (eq == std::string::npos)
      throw Error(Err::BadConfig, "override must look like section.key=value");
    std::string path = trim(dotted.substr(0, eq));
    std::string value = trim(dotted.substr(eq + 1));
    auto dot = path.find('.');
    if (dot == std::string::npos)
      set("", path, value);
    else
      set(path.substr(0, dot), path.substr(dot + 1), value);
  }

  // Every numeric entry of a section except the listed keys, for forwarding
  // into make_named_system / make_constraint / make_named_transform.
  std::map<std::string, double> numeric_params(const std::string& section,
                                               const std::set<std::string>& exclude = {}) const {
    std::map<std::string, double> out;
    auto it = sections_.find(section);
    if (it == sections_.end()) return out;
    for (const auto& [k, v] : it->second) {
      if (exclude.count(k)) continue;
      out[k] = parse_number(v);
    }
    return out;
  }

  const std::map<std::string, std::vector<Entry>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::vector<Entry>> sections_;
};

// ---------------------------------------------------------------------------
// Small value parsers

// axis syntax: name:lo:hi:count[:periodic[:period]]
inline GridAxis parse_axis(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  if (parts.size() < 4 || parts.size() > 6)
    throw Error(Err::BadConfig, "axis must be name:lo:hi:count[:periodic[:period]]: " + text);
  GridAxis a;
  a.name = trim(parts[0]);
  a.lo = parse_number(parts[1]);
  a.hi = parse_number(parts[2]);
  a.count = static_cast<int>(std::llround(parse_number(parts[3])));
  if (parts.size() >= 5) {
    std::string flag = trim(parts[4]);
    if (flag != "periodic")
      throw Error(Err::BadConfig, "axis flag must be 'periodic', got '" + flag + "'");
    a.periodic = true;
    a.period = parts.size() == 6 ? parse_number(parts[5]) : a.hi - a.lo;
  }
  a.validate();
  return a;
}

// matrix syntax: rows split by ';', entries by whitespace: "1 2; 3 -4"
inline Mat parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::string rowbuf;
  std::istringstream is(text);
  while (std::getline(is, rowbuf, ';')) {
    std::istringstream rs(rowbuf);
    std::vector<double> row;
    std::string tok;
    while (rs >> tok) row.push_back(parse_number(tok));
    if (!row.empty()) rows.push_back(row);
  }
  if (rows.empty()) throw Error(Err::BadConfig, "empty matrix '" + text + "'");
  Mat M(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw Error(Err::BadConfig, "ragged matrix '" + text + "'");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      M(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  }
  return M;
}

// inline spec: "circle cx=0 cy=0 r=1" -> kind + params
inline std::pair<std::string, std::map<std::string, double>> parse_inline_spec(
    const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  if (kind.empty()) throw Error(Err::BadConfig, "empty inline spec");
  std::map<std::string, double> params;
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw Error(Err::BadConfig, "inline spec token '" + tok + "' is not key=value");
    params[tok.substr(0, eq)] = parse_number(tok.substr(eq + 1));
  }
  return {kind, params};
}

// ---------------------------------------------------------------------------
// Builders

inline ControlSystem build_system(const Config& cfg) {
  // One-line form takes precedence: system = bicycle L=1 v_min=0.5
  if (auto inlined = cfg.get("", "system")) {
    auto [name, params] = parse_inline_spec(*inlined);
    return make_named_system(name, params);
  }
  if (!cfg.has_section("system")) throw Error(Err::BadConfig, "missing [system] section");
  std::string name = cfg.require_str("system", "name");
  Mat A, B;
  if (auto a = cfg.get("system", "A")) A = parse_matrix(*a);
  if (auto b = cfg.get("system", "B")) B = parse_matrix(*b);
  auto params = cfg.numeric_params("system", {"name", "A", "B"});
  return make_named_system(name, params, A, B);
}

inline ConstraintFunction build_constraint(const Config& cfg) {
  if (auto inlined = cfg.get("", "constraint")) {
    auto [kind, params] = parse_inline_spec(*inlined);
    return make_constraint(kind, params);
  }
  if (!cfg.has_section("constraint")) throw Error(Err::BadConfig, "missing [constraint] section");
  std::string kind = cfg.require_str("constraint", "kind");
  if (kind == "custom_maxmin") {
    std::string op = cfg.get_str("constraint", "op", "max");
    std::vector<ConstraintFunction> parts;
    for (const std::string& p : cfg.get_all("constraint", "part")) {
      auto [pk, pp] = parse_inline_spec(p);
      parts.push_back(make_constraint(pk, pp));
    }
    if (parts.empty())
      throw Error(Err::BadConfig, "custom_maxmin needs at least one part = ... line");
    return combine_constraints(op, parts);
  }
  return make_constraint(kind, cfg.numeric_params("constraint", {"kind", "op", "part"}));
}

inline std::vector<GridAxis> build_axes(const Config& cfg, const std::string& section) {
  std::vector<GridAxis> axes;
  for (const std::string& a : cfg.get_all(section, "axis")) axes.push_back(parse_axis(a));
  if (axes.empty()) throw Error(Err::BadConfig, "section [" + section + "] has no axis lines");
  return axes;
}

inline HorizonSpec build_horizon(const Config& cfg, const ControlSystem& sys,
                                 const ConstraintFunction& c) {
  HorizonSpec h;
  h.T = cfg.get_num("horizon", "T", 1.0);
  h.n_segments = cfg.get_int("horizon", "n_segments", 20);
  h.substeps = cfg.get_int("horizon", "substeps", 4);
  std::string gamma = cfg.get_str("horizon", "gamma", "auto");
  h.gamma = gamma == "auto" ? -1.0 : parse_number(gamma);
  std::string delta = cfg.get_str("horizon", "delta", "auto");
  h.terminal = default_terminal_set(sys, c, delta == "auto" ? -1.0 : parse_number(delta));
  return h;
}

inline OptimizerConfig build_optimizer(const Config& cfg) {
  OptimizerConfig o;
  o.n_iterations = cfg.get_int("optimizer", "n_iterations", o.n_iterations);
  o.population_size = cfg.get_int("optimizer", "population_size", o.population_size);
  o.elite_fraction = cfg.get_num("optimizer", "elite_fraction", o.elite_fraction);
  o.n_restarts = cfg.get_int("optimizer", "n_restarts", o.n_restarts);
  o.init_stddev = cfg.get_num("optimizer", "init_stddev", o.init_stddev);
  o.rng_seed = static_cast<std::uint64_t>(cfg.get_num("optimizer", "rng_seed", 0.0));
  o.infeasibility_penalty_weight =
      cfg.get_num("optimizer", "infeasibility_penalty_weight", o.infeasibility_penalty_weight);
  o.validate();
  return o;
}

inline ParamDiffeo build_transform(const Config& cfg, const std::string& section = "transform") {
  if (auto inlined = cfg.get("", "transform")) {
    auto [name, params] = parse_inline_spec(*inlined);
    return make_named_transform(name, params);
  }
  if (!cfg.has_section(section)) throw Error(Err::BadConfig, "missing [" + section + "] section");
  std::string name = cfg.require_str(section, "name");
  Mat P;
  if (auto p = cfg.get(section, "P")) P = parse_matrix(*p);
  return make_named_transform(name, cfg.numeric_params(section, {"name", "P"}), P);
}

struct ChartConfig {
  std::string name;
  std::map<std::string, double> params;
  Mat P;
  std::vector<GridAxis> m_axes;
};

inline ChartConfig build_chart_config(const Config& cfg) {
  if (!cfg.has_section("chart")) throw Error(Err::BadConfig, "missing [chart] section");
  ChartConfig ch;
  ch.name = cfg.require_str("chart", "name");
  if (auto p = cfg.get("chart", "P")) ch.P = parse_matrix(*p);
  ch.params = cfg.numeric_params("chart", {"name", "P", "axis"});
  ch.m_axes = build_axes(cfg, "chart");
  return ch;
}

inline PipelineSpec build_pipeline(const Config& cfg) {
  if (!cfg.has_section("pipeline")) throw Error(Err::BadConfig, "missing [pipeline] section");
  PipelineSpec spec;
  spec.kind = cfg.require_str("pipeline", "kind");
  spec.shape = cfg.numeric_params("pipeline", {"kind", "vertex", "n_sigma", "n_check_samples",
                                               "n_mc", "strict_shift", "seed"});
  for (const std::string& v : cfg.get_all("pipeline", "vertex")) {
    std::istringstream vs(v);
    std::string sx, sy;
    if (!(vs >> sx >> sy))
      throw Error(Err::BadConfig, "vertex must be 'x y', got '" + v + "'");
    spec.vertices.push_back(Vec2(parse_number(sx), parse_number(sy)));
  }
  spec.system = build_system(cfg);
  ConstraintFunction frame_halfplane =
      make_constraint("half_plane", {{"nx", 1.0}, {"ny", 0.0}, {"px", 0.0}, {"py", 0.0}});
  spec.horizon = build_horizon(cfg, spec.system, frame_halfplane);
  spec.optimizer = build_optimizer(cfg);
  spec.base_axes = build_axes(cfg, "base_grid");
  spec.out_axes = build_axes(cfg, "grid");
  spec.options.n_sigma = cfg.get_int("pipeline", "n_sigma", spec.options.n_sigma);
  spec.options.n_check_samples =
      cfg.get_int("pipeline", "n_check_samples", spec.options.n_check_samples);
  spec.options.n_mc = cfg.get_int("pipeline", "n_mc", spec.options.n_mc);
  spec.options.strict_shift = cfg.get_bool("pipeline", "strict_shift", spec.options.strict_shift);
  spec.options.seed = static_cast<std::uint64_t>(cfg.get_num("pipeline", "seed", 99.0));
  return spec;
}

}  // namespace eqcbf
