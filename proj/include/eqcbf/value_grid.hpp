#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

#include "json.hpp"

#include "eqcbf/common.hpp"

namespace eqcbf {

using ordered_json = nlohmann::ordered_json;

enum class Prov : std::uint8_t { Explicit = 0, Inferred = 1, Failed = 2 };

// One grid dimension. Points sit at lo + i * step for i in [0, count).
// Periodic axes carry an explicit period P >= hi - lo; queries are wrapped
// into [lo, lo + P) and the seam segment between the last point and the first
// (width P - (hi - lo)) interpolates across the wrap. A duplicated-endpoint
// layout (hi - lo == P) therefore has a zero-width seam that is never hit.
struct GridAxis {
  std::string name;
  double lo = 0, hi = 0;
  int count = 1;
  bool periodic = false;
  double period = 0;

  double step() const { return count > 1 ? (hi - lo) / (count - 1) : 0.0; }
  double point(int i) const { return lo + i * step(); }

  void validate() const {
    if (count < 1) throw Error(Err::BadGrid, "axis '" + name + "': count < 1");
    if (count > 1 && !(hi > lo)) throw Error(Err::BadGrid, "axis '" + name + "': hi <= lo");
    if (periodic) {
      if (!(period > 0)) throw Error(Err::BadGrid, "axis '" + name + "': period <= 0");
      if (period < hi - lo - 1e-12)
        throw Error(Err::BadGrid, "axis '" + name + "': period shorter than span");
    }
  }

  struct Segment {
    int i0 = 0, i1 = 0;
    double w = 0;  // weight of i1
  };

  // Locates q on the axis; throws OutOfDomain for non-periodic queries
  // strictly outside [lo, hi].
  Segment locate(double q) const {
    const double tol = 1e-9 * (1.0 + std::abs(lo) + std::abs(hi));
    if (count == 1) {
      if (!periodic && std::abs(q - lo) > tol)
        throw Error(Err::OutOfDomain, "axis '" + name + "': query off degenerate axis");
      return {0, 0, 0.0};
    }
    if (periodic) {
      double t = std::fmod(q - lo, period);
      if (t < 0) t += period;
      // t in [0, period)
      double s = t / step();
      int i = static_cast<int>(std::floor(s));
      if (i <= count - 2) {
        if (i < 0) i = 0;
        return {i, i + 1, s - i};
      }
      double seam = period - (hi - lo);
      double into = t - (hi - lo);
      if (seam <= 1e-12) return {count - 2, count - 1, 1.0};  // duplicated endpoint, t ~ hi
      return {count - 1, 0, into / seam};
    }
    if (q < lo - tol || q > hi + tol)
      throw Error(Err::OutOfDomain, "axis '" + name + "': query outside [lo, hi]");
    double s = (std::min(std::max(q, lo), hi) - lo) / step();
    int i = static_cast<int>(std::floor(s));
    if (i > count - 2) i = count - 2;
    if (i < 0) i = 0;
    return {i, i + 1, s - i};
  }
};

struct ValueGrid {
  std::vector<GridAxis> axes;
  std::vector<double> values;            // row-major, last axis fastest
  std::vector<std::uint8_t> provenance;  // Prov bytes, same layout
  ordered_json metadata = ordered_json::object();

  static ValueGrid make(std::vector<GridAxis> axes_) {
    ValueGrid g;
    g.axes = std::move(axes_);
    std::size_t n = 1;
    for (auto& a : g.axes) {
      a.validate();
      n *= static_cast<std::size_t>(a.count);
    }
    g.values.assign(n, std::numeric_limits<double>::quiet_NaN());
    g.provenance.assign(n, static_cast<std::uint8_t>(Prov::Failed));
    return g;
  }

  int ndim() const { return static_cast<int>(axes.size()); }
  std::size_t size() const { return values.size(); }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(axes.size(), 1);
    for (int i = ndim() - 2; i >= 0; --i)
      s[i] = s[i + 1] * static_cast<std::size_t>(axes[i + 1].count);
    return s;
  }

  std::size_t flat_index(const std::vector<int>& idx) const {
    auto s = strides();
    std::size_t f = 0;
    for (int i = 0; i < ndim(); ++i) f += s[i] * static_cast<std::size_t>(idx[i]);
    return f;
  }

  std::vector<int> multi_index(std::size_t flat) const {
    std::vector<int> idx(axes.size());
    auto s = strides();
    for (int i = 0; i < ndim(); ++i) {
      idx[i] = static_cast<int>(flat / s[i]);
      flat %= s[i];
    }
    return idx;
  }

  Vec point(std::size_t flat) const {
    auto idx = multi_index(flat);
    Vec x(ndim());
    for (int i = 0; i < ndim(); ++i) x[i] = axes[i].point(idx[i]);
    return x;
  }

  // Multilinear interpolation with periodic wrap. Throws OutOfDomain off the
  // grid and NaNCell when any participating corner is NaN. When worst_prov is
  // given it receives the max provenance byte among the corners.
  double interpolate(const Vec& q, std::uint8_t* worst_prov = nullptr) const {
    if (q.size() != ndim()) throw Error(Err::DimMismatch, "query dim != grid dim");
    std::vector<GridAxis::Segment> segs(axes.size());
    for (int i = 0; i < ndim(); ++i) segs[i] = axes[i].locate(q[i]);
    auto s = strides();
    double acc = 0;
    std::uint8_t worst = 0;
    int corners = 1 << ndim();
    for (int mask = 0; mask < corners; ++mask) {
      double w = 1.0;
      std::size_t f = 0;
      for (int i = 0; i < ndim(); ++i) {
        bool high = mask & (1 << i);
        w *= high ? segs[i].w : 1.0 - segs[i].w;
        f += s[i] * static_cast<std::size_t>(high ? segs[i].i1 : segs[i].i0);
      }
      if (w == 0.0) continue;
      double v = values[f];
      if (std::isnan(v)) throw Error(Err::NaNCell, "interpolation hit a NaN cell");
      worst = std::max(worst, provenance[f]);
      acc += w * v;
    }
    if (worst_prov) *worst_prov = worst;
    return acc;
  }

  // Clamps near-boundary queries (within margin_cells * step outside a
  // non-periodic axis) onto the boundary; leaves far-outside values alone so
  // interpolate() still reports them as out of domain.
  Vec clamp_to_bounds(const Vec& q, double margin_cells = 0.5) const {
    Vec r = q;
    for (int i = 0; i < ndim() && i < q.size(); ++i) {
      const auto& a = axes[i];
      if (a.periodic || a.count == 1) continue;
      double m = margin_cells * a.step();
      if (r[i] < a.lo && r[i] >= a.lo - m) r[i] = a.lo;
      if (r[i] > a.hi && r[i] <= a.hi + m) r[i] = a.hi;
    }
    return r;
  }

  bool in_bounds(const Vec& q) const {
    if (q.size() != ndim()) return false;
    for (int i = 0; i < ndim(); ++i) {
      const auto& a = axes[i];
      if (a.periodic) continue;
      const double tol = 1e-9 * (1.0 + std::abs(a.lo) + std::abs(a.hi));
      if (a.count == 1) {
        if (std::abs(q[i] - a.lo) > tol) return false;
      } else if (q[i] < a.lo - tol || q[i] > a.hi + tol) {
        return false;
      }
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Binary container (.eqcb): "EQCB" magic, u32 version, u64 JSON header length,
// header bytes, then little-endian f64 values and one provenance byte per
// cell. Round-trips bit-exactly.

namespace detail {

constexpr char kMagic[4] = {'E', 'Q', 'C', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(Err::TruncatedPayload, "unexpected end of file");
}

}  // namespace detail

inline ordered_json grid_header_json(const ValueGrid& g) {
  ordered_json axes = ordered_json::array();
  for (const auto& a : g.axes) {
    ordered_json ja;
    ja["name"] = a.name;
    ja["lo"] = a.lo;
    ja["hi"] = a.hi;
    ja["count"] = a.count;
    ja["periodic"] = a.periodic;
    ja["period"] = a.period;
    axes.push_back(ja);
  }
  ordered_json h;
  h["axes"] = axes;
  h["metadata"] = g.metadata;
  return h;
}

inline void save_grid(const ValueGrid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Err::BadParam, "cannot open '" + path + "' for writing");
  os.write(detail::kMagic, 4);
  detail::write_pod(os, detail::kVersion);
  std::string header = grid_header_json(g).dump();
  detail::write_pod(os, static_cast<std::uint64_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(g.values.data()),
           static_cast<std::streamsize>(g.values.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(g.provenance.data()),
           static_cast<std::streamsize>(g.provenance.size()));
  if (!os) throw Error(Err::BadParam, "short write to '" + path + "'");
}

inline ValueGrid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Err::BadParam, "cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw Error(Err::BadMagic, "not an eqcb file: " + path);
  std::uint32_t version = 0;
  detail::read_pod(is, version);
  if (version != detail::kVersion)
    throw Error(Err::VersionMismatch,
                "eqcb version " + std::to_string(version) + " unsupported");
  std::uint64_t hlen = 0;
  detail::read_pod(is, hlen);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw Error(Err::TruncatedPayload, "truncated header");
  ordered_json h;
  try {
    h = ordered_json::parse(header);
  } catch (const std::exception& e) {
    throw Error(Err::TruncatedPayload, std::string("bad header json: ") + e.what());
  }
  ValueGrid g;
  for (const auto& ja : h.at("axes")) {
    GridAxis a;
    a.name = ja.at("name").get<std::string>();
    a.lo = ja.at("lo").get<double>();
    a.hi = ja.at("hi").get<double>();
    a.count = ja.at("count").get<int>();
    a.periodic = ja.at("periodic").get<bool>();
    a.period = ja.at("period").get<double>();
    a.validate();
    g.axes.push_back(a);
  }
  g.metadata = h.value("metadata", ordered_json::object());
  std::size_t n = 1;
  for (const auto& a : g.axes) n *= static_cast<std::size_t>(a.count);
  g.values.resize(n);
  g.provenance.resize(n);
  is.read(reinterpret_cast<char*>(g.values.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw Error(Err::TruncatedPayload, "truncated value payload");
  is.read(reinterpret_cast<char*>(g.provenance.data()), static_cast<std::streamsize>(n));
  if (!is) throw Error(Err::TruncatedPayload, "truncated provenance payload");
  return g;
}

// ---------------------------------------------------------------------------
// Comparison and CSV export

inline double cell_diagonal(const std::vector<GridAxis>& axes) {
  double s = 0;
  for (const auto& a : axes)
    if (a.count > 1) s += a.step() * a.step();
  return std::sqrt(s);
}

struct GridComparison {
  bool same_shape = false;
  bool identical_bytes = false;  // values bitwise equal (NaN == NaN)
  double max_abs_diff = 0;
  double mean_abs_diff = 0;
  std::size_t nan_mismatches = 0;
  std::size_t provenance_mismatches = 0;
  std::size_t cells = 0;
};

inline GridComparison compare_grids(const ValueGrid& a, const ValueGrid& b) {
  GridComparison r;
  if (a.axes.size() != b.axes.size()) return r;
  for (std::size_t i = 0; i < a.axes.size(); ++i) {
    const auto &ax = a.axes[i], &bx = b.axes[i];
    if (ax.count != bx.count || ax.lo != bx.lo || ax.hi != bx.hi || ax.periodic != bx.periodic)
      return r;
  }
  r.same_shape = true;
  r.cells = a.size();
  r.identical_bytes =
      a.size() == b.size() &&
      std::memcmp(a.values.data(), b.values.data(), a.size() * sizeof(double)) == 0;
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool na = std::isnan(a.values[i]), nb = std::isnan(b.values[i]);
    if (na != nb) {
      ++r.nan_mismatches;
      continue;
    }
    if (na) continue;
    double d = std::abs(a.values[i] - b.values[i]);
    r.max_abs_diff = std::max(r.max_abs_diff, d);
    sum += d;
    ++counted;
    if (a.provenance[i] != b.provenance[i]) ++r.provenance_mismatches;
  }
  r.mean_abs_diff = counted ? sum / counted : 0.0;
  return r;
}

// Writes one row per cell: axis coordinates, value, provenance. When `fixed`
// pins axes to specific indices only the matching slice is emitted.
inline void export_csv(const ValueGrid& g, std::ostream& os,
                       const std::map<int, int>& fixed = {}) {
  for (int i = 0; i < g.ndim(); ++i) os << g.axes[i].name << ',';
  os << "value,provenance\n";
  char buf[32];
  for (std::size_t f = 0; f < g.size(); ++f) {
    auto idx = g.multi_index(f);
    bool skip = false;
    for (const auto& [ax, want] : fixed)
      if (idx[ax] != want) {
        skip = true;
        break;
      }
    if (skip) continue;
    for (int i = 0; i < g.ndim(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", g.axes[i].point(idx[i]));
      os << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", g.values[f]);
    os << buf << ',' << static_cast<int>(g.provenance[f]) << '\n';
  }
}

}  // namespace eqcbf
