#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hymlab/io.hpp"
#include "hymlab/projectivization.hpp"

namespace hymlab {

struct GeometryConfig {
  std::string kind = "flat";  ///< flat, sheared or conformal
  std::vector<int> grid{16, 16, 16, 16};
  std::vector<double> periods{1.0, 1.0, 1.0, 1.0};
  double amplitude = 0.0;
  bool gauduchon_correct = false;
};

/// A builtin bundle or a composition of bundles.
struct BundleNode {
  std::string op = "trivial";  ///< trivial, flat_line, flux_line, extension, direct_sum, tensor, dual, det
  int rank = 1;
  std::vector<double> angles;
  std::vector<int> k;
  std::vector<cd> b;
  double exact_amplitude = 0.0;  ///< extension: adds dbar(amplitude sin(2 pi u_axis))
  int exact_axis = 0;
  std::vector<BundleNode> children;
};

struct MetricConfig {
  std::string name = "identity";  ///< identity, random_smooth, diag or checkpoint
  std::uint64_t seed = 1;
  double amplitude = 0.3;
  std::vector<double> diag;
  std::string path;  ///< checkpoint to start from
  /// Second random_smooth seed for the metric-independence comparison.
  std::optional<std::uint64_t> compare_seed;
};

struct FlowConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  double stabilization = 1.0;
  double dt_min = 1e-7;
  double energy_tol = 10.0;
  double plateau_tol = 0.0;
  std::size_t plateau_window = 100;
  std::size_t max_steps = 10'000'000;
  std::vector<double> schedule{1.0, 0.5, 0.25, 0.125, 0.0625};
  double eps = 0.5;
  double target_ratio = 0.1;
  double perturbed_tol = 1e-8;
  /// Run the connection form of the flow alongside and record the gauge relation.
  bool gauge = false;
};

struct OutputConfig {
  std::string directory = "out";
  std::size_t sample_stride = 1;
  std::size_t checkpoint_stride = 0;  ///< 0 keeps only the final checkpoint
};

struct ProjectivizationConfig {
  int fiber_res = 64;
  double phi_amplitude = 0.3;  ///< metric change exp(phi), phi = amplitude sin(2 pi u_axis)
  int phi_axis = 0;
};

struct NefConfig {
  std::vector<double> eps{0.0, 0.01, 0.1};
  std::vector<BundleNode> lines;  ///< empty: the bundle section
};

struct ExperimentConfig {
  GeometryConfig geometry;
  BundleNode bundle;
  MetricConfig metric;
  FlowConfig flow;
  OutputConfig output;
  ProjectivizationConfig projectivization;
  NefConfig nef;
  bool strict = false;
};

inline constexpr std::size_t kMaxGridPoints = std::size_t(1) << 22;

namespace detail {

using nlohmann::json;

[[noreturn]] inline void config_error(const std::string& field, const std::string& msg) {
  throw Error(ErrorKind::config, "config field " + (field.empty() ? std::string("/") : field) + ": " + msg);
}

inline void allowed_keys(const json& j, const std::string& at, std::initializer_list<const char*> keys) {
  if (!j.is_object()) config_error(at, "expected an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) config_error(at + "/" + k, "unknown key");
}

inline double get_number(const json& j, const std::string& at) {
  if (!j.is_number()) config_error(at, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) config_error(at, "must be finite");
  return v;
}

inline std::int64_t get_int(const json& j, const std::string& at) {
  if (!j.is_number_integer()) config_error(at, "expected an integer");
  return j.get<std::int64_t>();
}

inline void read(const json& j, const char* key, const std::string& at, double& out, double lo, double hi) {
  if (!j.contains(key)) return;
  const std::string f = at + "/" + key;
  const double v = get_number(j.at(key), f);
  if (v < lo || v > hi) {
    std::ostringstream os;
    os << "value " << v << " outside [" << lo << ", " << hi << "]";
    config_error(f, os.str());
  }
  out = v;
}

template <class I>
void read(const json& j, const char* key, const std::string& at, I& out, std::int64_t lo, std::int64_t hi) {
  if (!j.contains(key)) return;
  const std::string f = at + "/" + key;
  const std::int64_t v = get_int(j.at(key), f);
  if (v < lo || v > hi) config_error(f, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  out = static_cast<I>(v);
}

inline void read(const json& j, const char* key, const std::string& at, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) config_error(at + "/" + key, "expected true or false");
  out = j.at(key).get<bool>();
}

inline void read(const json& j, const char* key, const std::string& at, std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) config_error(at + "/" + key, "expected a string");
  out = j.at(key).get<std::string>();
}

inline std::vector<double> number_list(const json& j, const std::string& at) {
  if (!j.is_array()) config_error(at, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], at + "/" + std::to_string(i)));
  return out;
}

inline std::vector<int> int_list(const json& j, const std::string& at, int lo, int hi) {
  if (!j.is_array()) config_error(at, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string f = at + "/" + std::to_string(i);
    const std::int64_t v = get_int(j[i], f);
    if (v < lo || v > hi) config_error(f, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

/// A complex coefficient is a number or a [re, im] pair.
inline cd complex_value(const json& j, const std::string& at) {
  if (j.is_number()) return cd(get_number(j, at), 0.0);
  if (j.is_array() && j.size() == 2) return cd(get_number(j[0], at + "/0"), get_number(j[1], at + "/1"));
  config_error(at, "expected a number or a [re, im] pair");
}

inline GeometryConfig parse_geometry(const json& j, const std::string& at) {
  allowed_keys(j, at, {"kind", "grid", "periods", "amplitude", "gauduchon_correct"});
  GeometryConfig g;
  read(j, "kind", at, g.kind);
  if (g.kind != "flat" && g.kind != "sheared" && g.kind != "conformal")
    config_error(at + "/kind", "unknown geometry \"" + g.kind + "\" (flat, sheared, conformal)");
  if (j.contains("grid")) g.grid = int_list(j.at("grid"), at + "/grid", 8, 256);
  if (g.grid.empty() || g.grid.size() % 2) config_error(at + "/grid", "needs an even, nonzero number of entries");
  if (g.grid.size() != 4) config_error(at + "/grid", "only complex surfaces (4 real dimensions) are supported");
  std::size_t points = 1;
  for (std::size_t k = 0; k < g.grid.size(); ++k) {
    if (g.grid[k] % 2) config_error(at + "/grid/" + std::to_string(k), "grid entries must be even");
    points *= static_cast<std::size_t>(g.grid[k]);
  }
  if (points > kMaxGridPoints) config_error(at + "/grid", "grid has " + std::to_string(points) + " points, limit " + std::to_string(kMaxGridPoints));
  if (j.contains("periods")) g.periods = number_list(j.at("periods"), at + "/periods");
  if (g.periods.size() != g.grid.size()) config_error(at + "/periods", "needs one period per grid axis");
  for (std::size_t k = 0; k < g.periods.size(); ++k)
    if (!(g.periods[k] >= 1e-3 && g.periods[k] <= 1e3)) config_error(at + "/periods/" + std::to_string(k), "period outside [0.001, 1000]");
  read(j, "amplitude", at, g.amplitude, -0.5, 0.5);
  read(j, "gauduchon_correct", at, g.gauduchon_correct);
  return g;
}

inline BundleNode parse_bundle(const json& j, const std::string& at, int depth = 0) {
  if (depth > 8) config_error(at, "bundle composition nested too deeply");
  if (!j.is_object()) config_error(at, "expected an object");
  BundleNode b;
  for (const char* op : {"direct_sum", "tensor"}) {
    if (!j.contains(op)) continue;
    allowed_keys(j, at, {op});
    const json& arr = j.at(op);
    const std::string f = at + "/" + op;
    if (!arr.is_array() || arr.size() < 2) config_error(f, "expected an array of at least two bundles");
    b.op = op;
    for (std::size_t i = 0; i < arr.size(); ++i) b.children.push_back(parse_bundle(arr[i], f + "/" + std::to_string(i), depth + 1));
    return b;
  }
  for (const char* op : {"dual", "det"}) {
    if (!j.contains(op)) continue;
    allowed_keys(j, at, {op});
    b.op = op;
    b.children.push_back(parse_bundle(j.at(op), at + "/" + op, depth + 1));
    return b;
  }
  if (!j.contains("builtin")) config_error(at, "expected \"builtin\" or one of direct_sum, tensor, dual, det");
  read(j, "builtin", at, b.op);
  if (b.op == "trivial") {
    allowed_keys(j, at, {"builtin", "rank"});
    read(j, "rank", at, b.rank, 1, kMaxRank);
  } else if (b.op == "flat_line") {
    allowed_keys(j, at, {"builtin", "angles"});
    if (!j.contains("angles")) config_error(at + "/angles", "required");
    b.angles = number_list(j.at("angles"), at + "/angles");
    if (b.angles.size() != 4) config_error(at + "/angles", "needs one angle per real direction");
  } else if (b.op == "flux_line") {
    allowed_keys(j, at, {"builtin", "k"});
    if (!j.contains("k")) config_error(at + "/k", "required");
    b.k = int_list(j.at("k"), at + "/k", -64, 64);
    if (b.k.size() != 2) config_error(at + "/k", "needs one flux per complex direction");
  } else if (b.op == "extension") {
    allowed_keys(j, at, {"builtin", "b", "exact"});
    b.rank = 2;
    if (!j.contains("b")) config_error(at + "/b", "required");
    const json& arr = j.at("b");
    if (!arr.is_array() || arr.size() != 2) config_error(at + "/b", "needs one coefficient per complex direction");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const cd v = complex_value(arr[i], at + "/b/" + std::to_string(i));
      if (std::abs(v) > 100.0) config_error(at + "/b/" + std::to_string(i), "coefficient magnitude above 100");
      b.b.push_back(v);
    }
    if (j.contains("exact")) {
      const std::string f = at + "/exact";
      allowed_keys(j.at("exact"), f, {"amplitude", "axis"});
      read(j.at("exact"), "amplitude", f, b.exact_amplitude, -10.0, 10.0);
      read(j.at("exact"), "axis", f, b.exact_axis, 0, 3);
    }
  } else {
    config_error(at + "/builtin", "unknown builtin \"" + b.op + "\" (trivial, flat_line, flux_line, extension)");
  }
  return b;
}

/// Rank of a bundle tree, computed without allocating anything.
inline int node_rank(const BundleNode& b) {
  if (b.op == "trivial") return b.rank;
  if (b.op == "flat_line" || b.op == "flux_line" || b.op == "det") return 1;
  if (b.op == "extension") return 2;
  if (b.op == "dual") return node_rank(b.children[0]);
  int r = b.op == "tensor" ? 1 : 0;
  for (const auto& c : b.children) r = b.op == "tensor" ? r * node_rank(c) : r + node_rank(c);
  return r;
}

inline MetricConfig parse_metric(const json& j, const std::string& at) {
  allowed_keys(j, at, {"name", "seed", "amplitude", "diag", "path", "compare_seed"});
  MetricConfig m;
  read(j, "name", at, m.name);
  if (m.name != "identity" && m.name != "random_smooth" && m.name != "diag" && m.name != "checkpoint")
    config_error(at + "/name", "unknown metric \"" + m.name + "\" (identity, random_smooth, diag, checkpoint)");
  read(j, "seed", at, m.seed, 0, std::numeric_limits<std::int64_t>::max());
  read(j, "amplitude", at, m.amplitude, 0.0, 3.0);
  if (j.contains("diag")) m.diag = number_list(j.at("diag"), at + "/diag");
  for (std::size_t i = 0; i < m.diag.size(); ++i)
    if (!(m.diag[i] > 0.0)) config_error(at + "/diag/" + std::to_string(i), "entries must be positive");
  if (m.name == "diag" && m.diag.empty()) config_error(at + "/diag", "required for the diag metric");
  read(j, "path", at, m.path);
  if (j.contains("compare_seed")) {
    std::uint64_t v = 0;
    read(j, "compare_seed", at, v, 0, std::numeric_limits<std::int64_t>::max());
    m.compare_seed = v;
  }
  if (m.name == "checkpoint" && m.path.empty()) config_error(at + "/path", "required for the checkpoint metric");
  return m;
}

inline FlowConfig parse_flow(const json& j, const std::string& at) {
  allowed_keys(j, at, {"dt", "horizon", "stabilization", "dt_min", "energy_tol", "plateau_tol", "plateau_window",
                       "max_steps", "schedule", "eps", "target_ratio", "perturbed_tol", "gauge"});
  FlowConfig f;
  read(j, "dt", at, f.dt, 1e-9, 10.0);
  read(j, "horizon", at, f.horizon, 0.0, 1e6);
  read(j, "stabilization", at, f.stabilization, 0.0, 1e3);
  read(j, "dt_min", at, f.dt_min, 1e-15, 1.0);
  read(j, "energy_tol", at, f.energy_tol, 0.0, 1e6);
  read(j, "plateau_tol", at, f.plateau_tol, 0.0, 1.0);
  read(j, "plateau_window", at, f.plateau_window, 1, 1'000'000);
  read(j, "max_steps", at, f.max_steps, 1, 100'000'000);
  if (j.contains("schedule")) {
    f.schedule = number_list(j.at("schedule"), at + "/schedule");
    if (f.schedule.empty()) config_error(at + "/schedule", "needs at least one value");
    for (std::size_t i = 0; i < f.schedule.size(); ++i)
      if (!(f.schedule[i] > 0.0 && f.schedule[i] <= 1.0)) config_error(at + "/schedule/" + std::to_string(i), "must lie in (0, 1]");
  }
  read(j, "eps", at, f.eps, 1e-6, 1.0);
  read(j, "target_ratio", at, f.target_ratio, 0.0, 1.0);
  read(j, "perturbed_tol", at, f.perturbed_tol, 1e-14, 1.0);
  read(j, "gauge", at, f.gauge);
  if (f.dt_min > f.dt) config_error(at + "/dt_min", "must not exceed dt");
  return f;
}

inline OutputConfig parse_output(const json& j, const std::string& at) {
  allowed_keys(j, at, {"directory", "sample_stride", "checkpoint_stride"});
  OutputConfig o;
  read(j, "directory", at, o.directory);
  read(j, "sample_stride", at, o.sample_stride, 1, 1'000'000);
  read(j, "checkpoint_stride", at, o.checkpoint_stride, 0, 100'000'000);
  return o;
}

inline ProjectivizationConfig parse_projectivization(const json& j, const std::string& at) {
  allowed_keys(j, at, {"fiber_res", "phi_amplitude", "phi_axis"});
  ProjectivizationConfig p;
  read(j, "fiber_res", at, p.fiber_res, 8, 512);
  if (p.fiber_res % 2) config_error(at + "/fiber_res", "must be even");
  read(j, "phi_amplitude", at, p.phi_amplitude, -5.0, 5.0);
  read(j, "phi_axis", at, p.phi_axis, 0, 3);
  return p;
}

inline NefConfig parse_nef(const json& j, const std::string& at) {
  allowed_keys(j, at, {"eps", "lines"});
  NefConfig n;
  if (j.contains("eps")) {
    n.eps = number_list(j.at("eps"), at + "/eps");
    for (std::size_t i = 0; i < n.eps.size(); ++i)
      if (n.eps[i] < 0.0 || n.eps[i] > 1e3) config_error(at + "/eps/" + std::to_string(i), "must lie in [0, 1000]");
  }
  if (j.contains("lines")) {
    const json& arr = j.at("lines");
    if (!arr.is_array()) config_error(at + "/lines", "expected an array of bundles");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string f = at + "/lines/" + std::to_string(i);
      n.lines.push_back(parse_bundle(arr[i], f));
      if (node_rank(n.lines.back()) != 1) config_error(f, "nef certification needs a line bundle");
    }
  }
  return n;
}

inline std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Parses a JSON experiment config (comments allowed). Syntax errors report line and column,
/// semantic errors the offending field; every range is checked before anything is allocated.
inline ExperimentConfig parse_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    if (const auto pos = msg.find("parse error"); pos != std::string::npos) msg = msg.substr(pos);
    throw Error(ErrorKind::config, "config syntax error at " + detail::line_column(text, e.byte) + ": " + msg);
  }
  detail::allowed_keys(j, "", {"geometry", "bundle", "metric", "flow", "output", "projectivization", "nef", "strict"});
  ExperimentConfig c;
  if (j.contains("geometry")) c.geometry = detail::parse_geometry(j.at("geometry"), "/geometry");
  if (!j.contains("bundle")) detail::config_error("/bundle", "required");
  c.bundle = detail::parse_bundle(j.at("bundle"), "/bundle");
  if (detail::node_rank(c.bundle) > kMaxRank) detail::config_error("/bundle", "rank above " + std::to_string(kMaxRank));
  if (j.contains("metric")) c.metric = detail::parse_metric(j.at("metric"), "/metric");
  if (c.metric.name == "diag" && static_cast<int>(c.metric.diag.size()) != detail::node_rank(c.bundle))
    detail::config_error("/metric/diag", "needs one entry per rank");
  if (j.contains("flow")) c.flow = detail::parse_flow(j.at("flow"), "/flow");
  if (j.contains("output")) c.output = detail::parse_output(j.at("output"), "/output");
  if (j.contains("projectivization")) c.projectivization = detail::parse_projectivization(j.at("projectivization"), "/projectivization");
  if (j.contains("nef")) c.nef = detail::parse_nef(j.at("nef"), "/nef");
  detail::read(j, "strict", "", c.strict);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------- builders

inline Geometry build_geometry(const GeometryConfig& c) {
  Geometry g = c.kind == "sheared"     ? make_sheared_gauduchon_torus(c.grid, c.periods, c.amplitude)
               : c.kind == "conformal" ? make_conformal_torus(c.grid, c.periods, c.amplitude)
                                       : make_flat_torus(c.grid, c.periods);
  if (c.gauduchon_correct) g = gauduchon_correct(g);
  return g;
}

inline Field sine_field(const Grid& g, double amplitude, int axis) {
  Field f(g.points());
  for (std::size_t p = 0; p < g.points(); ++p) f[p] = amplitude * std::sin(2.0 * kPi * g.coord(p, axis));
  return f;
}

inline BundleSpec build_bundle(const BundleNode& b, const GridPtr& g) {
  if (b.op == "trivial") return trivial_bundle(g, b.rank);
  if (b.op == "flat_line") return flat_line(g, b.angles);
  if (b.op == "flux_line") return flux_line(g, b.k);
  if (b.op == "extension") {
    ExtensionClass e = b.exact_amplitude != 0.0 ? exact_class(*g, sine_field(*g, b.exact_amplitude, b.exact_axis))
                                                : constant_class(*g, std::vector<cd>(b.b.size(), 0.0));
    for (std::size_t k = 0; k < b.b.size(); ++k)
      for (auto& x : e.beta[k]) x += b.b[k];
    return extension_bundle(g, e);
  }
  if (b.op == "dual") return dual(build_bundle(b.children[0], g));
  if (b.op == "det") return det(build_bundle(b.children[0], g));
  BundleSpec s = build_bundle(b.children[0], g);
  for (std::size_t i = 1; i < b.children.size(); ++i)
    s = b.op == "tensor" ? tensor(s, build_bundle(b.children[i], g)) : direct_sum(s, build_bundle(b.children[i], g));
  return s;
}

inline EndField build_metric(const MetricConfig& m, const BundleSpec& s) {
  if (m.name == "random_smooth") return random_smooth_metric(s, m.seed, m.amplitude);
  if (m.name == "diag") return diag_metric(s, m.diag);
  if (m.name == "checkpoint") {
    const Checkpoint c = read_checkpoint(m.path);
    require(c.shape == s.grid->shape() && c.periods == s.grid->periods(), ErrorKind::mismatch,
            "checkpoint " + m.path + " was written on a different grid");
    require(c.H.rank() == s.rank, ErrorKind::mismatch, "checkpoint " + m.path + " has the wrong rank");
    return c.H;
  }
  return identity_metric(s);
}

/// Closed-form nef residual of the identity metric for builtin lines on a flat torus, when known.
inline std::optional<double> predicted_nef_residual(const BundleNode& line, const GeometryConfig& g, double eps) {
  if (g.kind != "flat" && g.amplitude != 0.0) return std::nullopt;
  if (line.op == "trivial" || line.op == "flat_line") return eps;
  if (line.op != "flux_line") return std::nullopt;
  double m = 0.0;
  for (std::size_t a = 0; a < line.k.size(); ++a) m = std::min(m, kPi * line.k[a] / (0.5 * g.periods[2 * a] * g.periods[2 * a + 1]));
  return eps + m;
}

}  // namespace hymlab
