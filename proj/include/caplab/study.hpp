#pragma once

// Study orchestration: configuration parsing, cell execution and report
// emission (CSV, JSON, long-format CSV).

#include "caplab/capacity.hpp"
#include "caplab/truncation.hpp"

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <utility>

#ifndef CAPLAB_VERSION
#define CAPLAB_VERSION "0.1.0"
#endif

namespace caplab {

inline constexpr const char* kVersion = CAPLAB_VERSION;
inline constexpr double kCellBudget = 1e5;

/// Missing, unknown, ill-typed or out-of-range configuration entries.
class ConfigError : public InvalidArgument {
public:
  explicit ConfigError(const std::string& what, int line = -1)
      : InvalidArgument(line >= 0 ? "line " + std::to_string(line + 1) + ": " + what : what), line_(line) {}
  /// zero-based source line, -1 when unknown
  int line() const { return line_; }

private:
  int line_;
};

enum class StudyKind { Threshold, Comparison, Constants, Potentials, Hausdorff };

inline std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::Threshold: return "threshold";
    case StudyKind::Comparison: return "comparison";
    case StudyKind::Constants: return "constants";
    case StudyKind::Potentials: return "potentials";
    case StudyKind::Hausdorff: return "hausdorff";
  }
  return "threshold";
}

inline std::optional<StudyKind> parse_study_kind(const std::string& s) {
  for (auto k : {StudyKind::Threshold, StudyKind::Comparison, StudyKind::Constants, StudyKind::Potentials,
                 StudyKind::Hausdorff})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// torus | box: n is the grid side; heisenberg: n is the lattice radius,
/// and dilate sets the scale to 1/n at each level.
struct SpaceConfig {
  std::string kind = "torus";
  int d = 2;
  std::vector<Index> n;
  double scale = 1.0;
  bool dilate = false;
  bool operator==(const SpaceConfig&) const = default;
};

/// point | kplane | cantor_dust | log_cantor | random | empty
struct SetConfig {
  std::string kind = "point";
  std::vector<double> location;
  int k = 1;
  std::vector<double> offset;
  double ratio = 1.0 / 3.0;
  int depth = 6;
  int factors = 1;
  double eps = 1.0;
  /// points per random pattern
  Index count = 3;
  bool operator==(const SetConfig&) const = default;
};

/// power | log_power | log_exponent
struct GaugeConfig {
  std::string kind = "power";
  double s = 1.0;
  double p = 2.0;
  double eps = 0.0;
  bool operator==(const GaugeConfig&) const = default;
};

struct StudyConfig {
  StudyKind study = StudyKind::Threshold;
  SpaceConfig space;
  SetConfig set;
  GaugeConfig gauge;
  double p = 2.0;
  double lambda = kDefaultLambda;
  double alpha = 1.0;
  double tol = 1e-6;
  /// Riesz order for potentials studies
  double s = 1.0;
  Index samples = 10;
  Index nbhd_radius = 1;
  std::uint64_t seed = 1;
  double budget = kCellBudget;
  std::string out_dir = "out";
  std::string name = "study";
  bool operator==(const StudyConfig&) const = default;
};

inline bool is_grid(const SpaceConfig& s) { return s.kind == "torus" || s.kind == "box"; }

/// Ambient (homogeneous) dimension of the configured space.
inline double ambient_dimension(const SpaceConfig& s) { return is_grid(s) ? s.d : 4.0; }

inline void validate_config(const StudyConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.space.kind != "torus" && c.space.kind != "box" && c.space.kind != "heisenberg")
    fail("space.kind must be torus, box or heisenberg");
  if (is_grid(c.space) && (c.space.d < 1 || c.space.d > 5)) fail("space.d must lie in 1..5");
  if (c.space.n.empty()) fail("space.n must list at least one size");
  for (std::size_t i = 0; i < c.space.n.size(); ++i) {
    if (c.space.n[i] < (is_grid(c.space) ? 2 : 1)) fail("space.n entries are too small");
    if (i > 0 && c.space.n[i] <= c.space.n[i - 1]) fail("space.n must be strictly increasing");
  }
  if (!(c.space.scale > 0)) fail("space.scale must be positive");
  if (!(c.p > 1) || !std::isfinite(c.p)) fail("p must lie in (1, inf)");
  if (!(c.lambda > 0) || !std::isfinite(c.lambda)) fail("lambda must be positive");
  if (!(c.alpha >= 1 && c.alpha < 2)) fail("alpha must lie in [1, 2)");
  if (!(c.tol > 0)) fail("tol must be positive");
  if (!(c.budget > 0)) fail("budget must be positive");
  if (c.samples < 1) fail("samples must be at least 1");
  if (c.nbhd_radius < 0) fail("nbhd_radius must be nonnegative");
  if (c.name.empty() || c.name.find('/') != std::string::npos) fail("output.name must be a plain file stem");
  static const std::set<std::string> set_kinds{"point", "kplane", "cantor_dust", "log_cantor", "random", "empty"};
  if (!set_kinds.count(c.set.kind)) fail("set.kind is not a known set variant");
  if (c.set.count < 1) fail("set.count must be at least 1");
  if (c.space.kind == "heisenberg" && c.set.kind != "point")
    fail("heisenberg studies support only the point set at the identity");
  if (c.study == StudyKind::Potentials && !(c.s > 0 && c.s < ambient_dimension(c.space)))
    fail("s must lie in (0, d)");
  if ((c.study == StudyKind::Comparison || c.study == StudyKind::Potentials) && !is_grid(c.space))
    fail(to_string(c.study) + " studies need a torus or box space");
  if (c.study == StudyKind::Hausdorff) {
    if (!is_grid(c.space)) fail("hausdorff studies need a torus or box space");
    if (c.set.kind == "random" || c.set.kind == "empty") fail("hausdorff studies need a structured set");
    if (c.gauge.kind != "power" && c.gauge.kind != "log_power" && c.gauge.kind != "log_exponent")
      fail("gauge.kind must be power, log_power or log_exponent");
  }
}

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line; }

template <class T>
T read_as(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("key '" + key + "' has the wrong type", line_of(n));
  }
}

inline void check_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& where) {
  if (!map.IsMap()) throw ConfigError("'" + where + "' must be a mapping", line_of(map));
  for (const auto& kv : map) {
    const auto key = read_as<std::string>(kv.first, where);
    if (!allowed.count(key)) {
      const std::string full = where.empty() ? key : where + "." + key;
      throw ConfigError("unknown key '" + full + "'", line_of(kv.first));
    }
  }
}

template <class T>
void read_opt(const YAML::Node& map, const char* key, T& into, const std::string& where) {
  if (const auto n = map[key]) into = read_as<T>(n, where.empty() ? key : where + "." + key);
}

inline SetSpec to_set_spec(const SetConfig& s, int d) {
  SetSpec spec;
  spec.d = d;
  if (s.kind == "point") {
    auto loc = s.location;
    loc.resize(static_cast<std::size_t>(d), 0.0);
    spec.shape = PointSet{loc};
  } else if (s.kind == "kplane") {
    spec.shape = KPlaneSet{s.k, s.offset};
  } else if (s.kind == "cantor_dust") {
    spec.shape = CantorDustSet{s.ratio, s.depth, s.factors};
  } else if (s.kind == "log_cantor") {
    spec.shape = LogCantorSet{s.eps, s.depth};
  } else {
    throw ConfigError("set.kind '" + s.kind + "' has no geometric shape");
  }
  validate_set(spec);
  return spec;
}

inline HausdorffFn to_gauge(const GaugeConfig& g) {
  HausdorffFn h;
  if (g.kind == "power") h = PowerGauge{g.s};
  else if (g.kind == "log_power") h = LogPowerGauge{g.p};
  else h = LogExponentGauge{g.eps};
  validate_gauge(h);
  return h;
}

}  // namespace detail

inline StudyConfig config_from_yaml(const YAML::Node& root) {
  using namespace detail;
  if (!root || root.IsNull()) throw ConfigError("configuration is empty");
  check_keys(root, {"study", "space", "set", "gauge", "p", "lambda", "alpha", "tol", "s", "samples", "nbhd_radius",
                    "seed", "budget", "output"},
             "");
  StudyConfig c;
  if (root["study"]) {
    const auto kind = read_as<std::string>(root["study"], "study");
    const auto parsed = parse_study_kind(kind);
    if (!parsed) throw ConfigError("unknown study kind '" + kind + "'", line_of(root["study"]));
    c.study = *parsed;
  }

  const auto space = root["space"];
  if (!space) throw ConfigError("missing key 'space'");
  check_keys(space, {"kind", "d", "n", "scale", "dilate"}, "space");
  read_opt(space, "kind", c.space.kind, "space");
  read_opt(space, "d", c.space.d, "space");
  read_opt(space, "scale", c.space.scale, "space");
  read_opt(space, "dilate", c.space.dilate, "space");
  if (!space["n"]) throw ConfigError("missing key 'space.n'", line_of(space));
  if (space["n"].IsScalar()) c.space.n = {read_as<Index>(space["n"], "space.n")};
  else c.space.n = read_as<std::vector<Index>>(space["n"], "space.n");
  if (c.space.kind == "heisenberg") c.space.d = 4;

  if (const auto set = root["set"]) {
    check_keys(set, {"kind", "location", "k", "offset", "ratio", "depth", "factors", "eps", "count"}, "set");
    read_opt(set, "kind", c.set.kind, "set");
    read_opt(set, "location", c.set.location, "set");
    read_opt(set, "k", c.set.k, "set");
    read_opt(set, "offset", c.set.offset, "set");
    read_opt(set, "ratio", c.set.ratio, "set");
    read_opt(set, "depth", c.set.depth, "set");
    read_opt(set, "factors", c.set.factors, "set");
    read_opt(set, "eps", c.set.eps, "set");
    read_opt(set, "count", c.set.count, "set");
  } else if (c.study == StudyKind::Comparison || c.study == StudyKind::Potentials) {
    c.set.kind = "random";
  }
  if (const auto gauge = root["gauge"]) {
    check_keys(gauge, {"kind", "s", "p", "eps"}, "gauge");
    read_opt(gauge, "kind", c.gauge.kind, "gauge");
    read_opt(gauge, "s", c.gauge.s, "gauge");
    read_opt(gauge, "p", c.gauge.p, "gauge");
    read_opt(gauge, "eps", c.gauge.eps, "gauge");
  }
  read_opt(root, "p", c.p, "");
  read_opt(root, "lambda", c.lambda, "");
  read_opt(root, "alpha", c.alpha, "");
  read_opt(root, "tol", c.tol, "");
  read_opt(root, "s", c.s, "");
  read_opt(root, "samples", c.samples, "");
  read_opt(root, "nbhd_radius", c.nbhd_radius, "");
  read_opt(root, "seed", c.seed, "");
  read_opt(root, "budget", c.budget, "");
  if (const auto out = root["output"]) {
    check_keys(out, {"dir", "name"}, "output");
    read_opt(out, "dir", c.out_dir, "output");
    read_opt(out, "name", c.name, "output");
  }
  validate_config(c);
  if (c.set.kind != "random" && c.set.kind != "empty" && c.space.kind != "heisenberg")
    detail::to_set_spec(c.set, c.space.d);
  if (c.study == StudyKind::Hausdorff) detail::to_gauge(c.gauge);
  return c;
}

inline StudyConfig parse_config_string(const std::string& text) {
  try {
    return config_from_yaml(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

inline StudyConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path);
  std::stringstream text;
  text << in.rdbuf();
  return parse_config_string(text.str());
}

// JSON mirrors of the configuration ------------------------------------------

inline nlohmann::json config_to_json(const StudyConfig& c) {
  return {{"study", to_string(c.study)},
          {"space", {{"kind", c.space.kind}, {"d", c.space.d}, {"n", c.space.n}, {"scale", c.space.scale}, {"dilate", c.space.dilate}}},
          {"set",
           {{"kind", c.set.kind},
            {"location", c.set.location},
            {"k", c.set.k},
            {"offset", c.set.offset},
            {"ratio", c.set.ratio},
            {"depth", c.set.depth},
            {"factors", c.set.factors},
            {"eps", c.set.eps},
            {"count", c.set.count}}},
          {"gauge", {{"kind", c.gauge.kind}, {"s", c.gauge.s}, {"p", c.gauge.p}, {"eps", c.gauge.eps}}},
          {"p", c.p},
          {"lambda", c.lambda},
          {"alpha", c.alpha},
          {"tol", c.tol},
          {"s", c.s},
          {"samples", c.samples},
          {"nbhd_radius", c.nbhd_radius},
          {"seed", c.seed},
          {"budget", c.budget},
          {"output", {{"dir", c.out_dir}, {"name", c.name}}}};
}

inline StudyConfig config_from_json(const nlohmann::json& j) {
  StudyConfig c;
  const auto kind = parse_study_kind(j.at("study").get<std::string>());
  if (!kind) throw ConfigError("unknown study kind in JSON");
  c.study = *kind;
  const auto& sp = j.at("space");
  c.space = {sp.at("kind"), sp.at("d"), sp.at("n").get<std::vector<Index>>(), sp.at("scale"), sp.at("dilate")};
  const auto& st = j.at("set");
  c.set.kind = st.at("kind");
  c.set.location = st.at("location").get<std::vector<double>>();
  c.set.k = st.at("k");
  c.set.offset = st.at("offset").get<std::vector<double>>();
  c.set.ratio = st.at("ratio");
  c.set.depth = st.at("depth");
  c.set.factors = st.at("factors");
  c.set.eps = st.at("eps");
  c.set.count = st.at("count");
  const auto& g = j.at("gauge");
  c.gauge = {g.at("kind"), g.at("s"), g.at("p"), g.at("eps")};
  c.p = j.at("p");
  c.lambda = j.at("lambda");
  c.alpha = j.at("alpha");
  c.tol = j.at("tol");
  c.s = j.at("s");
  c.samples = j.at("samples");
  c.nbhd_radius = j.at("nbhd_radius");
  c.seed = j.at("seed");
  c.budget = j.at("budget");
  c.out_dir = j.at("output").at("dir");
  c.name = j.at("output").at("name");
  return c;
}

// Reports ------------------------------------------------------------------

struct StudyCell {
  int level = 0;
  Index n = 0;
  Index sample = 0;
  std::map<std::string, double> values;
  bool ok = true;
  std::string reason;
  nlohmann::json diagnostics = nlohmann::json::object();
};

struct StudyReport {
  StudyConfig config;
  /// identifying CSV columns, then value columns, then status,reason
  std::vector<std::string> keys;
  std::vector<std::string> columns;
  std::vector<StudyCell> cells;
  /// fitted slopes and constants
  std::map<std::string, double> summary;
  std::string classification;
  double wall_clock = 0.0;
  std::string version = kVersion;
  std::string timestamp;
};

namespace detail {

inline bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline bool same_numbers(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end() || !same_number(v, it->second)) return false;
  }
  return true;
}

}  // namespace detail

inline bool operator==(const StudyCell& a, const StudyCell& b) {
  return a.level == b.level && a.n == b.n && a.sample == b.sample && detail::same_numbers(a.values, b.values) &&
         a.ok == b.ok && a.reason == b.reason && a.diagnostics == b.diagnostics;
}

inline bool operator==(const StudyReport& a, const StudyReport& b) {
  return a.config == b.config && a.keys == b.keys && a.columns == b.columns && a.cells == b.cells &&
         detail::same_numbers(a.summary, b.summary) && a.classification == b.classification &&
         a.wall_clock == b.wall_clock && a.version == b.version && a.timestamp == b.timestamp;
}

inline std::vector<std::string> study_keys(StudyKind k) {
  if (k == StudyKind::Comparison) return {"level", "n", "sample"};
  return {"level", "n"};
}

inline std::vector<std::string> study_columns(StudyKind k) {
  switch (k) {
    case StudyKind::Threshold: return {"primal", "dual", "gap", "slope"};
    case StudyKind::Comparison: return {"set_size", "cap", "ccap", "ratio", "first_ok"};
    case StudyKind::Constants:
      return {"log_gradient", "maximal_inf", "maximal_p", "gaussian_slope", "c8", "c9", "gradient_p",
              "gradient_semigroup"};
    case StudyKind::Potentials: return {"wolff", "muckenhoupt_wheeden", "giraud", "fubini_residual"};
    case StudyKind::Hausdorff: return {"nodes", "cubes", "hausdorff_sum"};
  }
  return {};
}

/// Node count of one cell, known before anything is allocated.
inline double cell_estimate(const SpaceConfig& s, Index n) {
  if (is_grid(s)) return std::pow(static_cast<double>(n), s.d);
  return 0.15 * std::pow(static_cast<double>(n) + 1.0, 4);
}

inline void check_budget(const StudyConfig& c) {
  for (Index n : c.space.n) {
    const double est = cell_estimate(c.space, n);
    if (est > c.budget) {
      std::ostringstream msg;
      msg << "cell n=" << n << " needs about " << static_cast<long long>(est) << " nodes, over the budget of "
          << static_cast<long long>(c.budget);
      throw BudgetError(msg.str(), est);
    }
  }
}

inline Space build_study_space(const SpaceConfig& s, Index n) {
  if (s.kind == "torus") return build_torus_grid(s.d, n);
  if (s.kind == "box") return build_box_grid(s.d, n);
  return build_heisenberg_lattice(static_cast<int>(n), s.dilate ? 1.0 / static_cast<double>(n) : s.scale);
}

namespace detail {

/// Uniform doubles from the top 53 bits, identical on every platform.
class UnitStream {
public:
  explicit UnitStream(std::uint64_t seed) : rng_(seed) {}
  double next() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

private:
  std::mt19937_64 rng_;
};

inline std::vector<PointList> random_patterns(Index patterns, Index count, int d, std::uint64_t seed) {
  UnitStream u(seed);
  std::vector<PointList> out(static_cast<std::size_t>(patterns));
  for (auto& pts : out) {
    pts.resize(static_cast<std::size_t>(count));
    for (auto& p : pts) {
      p.resize(static_cast<std::size_t>(d));
      for (auto& x : p) x = u.next();
    }
  }
  return out;
}

inline std::vector<Index> snap_all(const Space& space, const PointList& pts) {
  std::set<Index> nodes;
  for (const auto& p : pts) nodes.insert(snap_point(space, p));
  return {nodes.begin(), nodes.end()};
}

}  // namespace detail

/// Positive smooth functions exp(a sum_k cos(2 pi m_k x_k / L_k + phi_k)) with
/// seeded amplitudes, frequencies and phases; L_k is the coordinate extent.
inline std::vector<NodeFunction> smooth_family(const Space& space, Index count, std::uint64_t seed) {
  const int cd = space.coord_dim();
  std::vector<double> lo(static_cast<std::size_t>(cd), kInf), hi(static_cast<std::size_t>(cd), -kInf);
  for (Index x = 0; x < space.size(); ++x)
    for (int k = 0; k < cd; ++k) {
      lo[static_cast<std::size_t>(k)] = std::min(lo[static_cast<std::size_t>(k)], space.coords(x)[static_cast<std::size_t>(k)]);
      hi[static_cast<std::size_t>(k)] = std::max(hi[static_cast<std::size_t>(k)], space.coords(x)[static_cast<std::size_t>(k)]);
    }
  const double step = space.kind() == SpaceKind::Heisenberg ? 1.0 : space.spacing();
  detail::UnitStream u(seed);
  std::vector<NodeFunction> out;
  for (Index j = 0; j < count; ++j) {
    const double a = 0.2 + 0.8 * u.next();
    std::vector<double> m(static_cast<std::size_t>(cd)), phi(static_cast<std::size_t>(cd));
    for (int k = 0; k < cd; ++k) {
      m[static_cast<std::size_t>(k)] = 1.0 + std::floor(3.0 * u.next());
      phi[static_cast<std::size_t>(k)] = 2 * std::numbers::pi * u.next();
    }
    NodeFunction f(space.size());
    for (Index x = 0; x < space.size(); ++x) {
      double e = 0;
      for (int k = 0; k < cd; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const double len = hi[kk] - lo[kk] + step;
        e += std::cos(2 * std::numbers::pi * m[kk] * (space.coords(x)[kk] - lo[kk]) / len + phi[kk]);
      }
      f[x] = std::exp(a * e);
    }
    out.push_back(std::move(f));
  }
  return out;
}

namespace detail {

inline double spread(const std::vector<StudyCell>& cells, const std::string& column) {
  double lo = kInf, hi = 0;
  for (const auto& c : cells) {
    if (!c.ok) continue;
    const auto it = c.values.find(column);
    if (it == c.values.end() || !std::isfinite(it->second) || it->second <= 0) continue;
    lo = std::min(lo, it->second);
    hi = std::max(hi, it->second);
  }
  return hi > 0 ? hi / lo : std::numeric_limits<double>::quiet_NaN();
}

inline void run_threshold_cell(const StudyConfig& c, const Space& space, StudyCell& cell, KernelCache* cache) {
  std::vector<Index> set;
  if (c.space.kind == "heisenberg") set = {0};
  else if (c.set.kind != "empty") set = realize_set(to_set_spec(c.set, c.space.d), space);
  cell.diagnostics["nodes"] = space.size();
  cell.diagnostics["set_size"] = set.size();
  if (set.empty()) {
    cell.values = {{"primal", 0.0}, {"dual", 0.0}, {"gap", 0.0}};
    return;
  }
  CapacityOptions opts;
  opts.gap_tolerance = c.tol;
  opts.cache = cache;
  const auto pr = CapacityProblem::global(space, std::move(set), c.lambda, opts);
  const auto primal = cap_primal(pr, c.p, opts);
  const auto dual = cap_dual(pr, c.p, opts);
  const double lower = std::max(primal.dual, dual.dual);
  cell.values = {{"primal", primal.primal}, {"dual", lower}, {"gap", relative_gap(primal.primal, lower)}};
  cell.diagnostics["iterations"] = primal.iterations + dual.iterations;
  cell.diagnostics["converged"] = primal.converged && dual.converged;
}

inline void run_comparison_cell(const StudyConfig& c, const Space& space, const std::vector<Index>& set,
                                StudyCell& cell, KernelCache* cache) {
  cell.values["set_size"] = static_cast<double>(set.size());
  if (set.empty()) {
    cell.values.insert({{"cap", 0.0}, {"ccap", 0.0}, {"ratio", std::numeric_limits<double>::quiet_NaN()},
                        {"first_ok", 1.0}});
    return;
  }
  CapacityOptions opts;
  opts.gap_tolerance = c.tol;
  opts.cache = cache;
  const auto cap = cap_primal(space, set, c.p, c.lambda, opts);
  const auto cc = ccap(space, set, c.p, c.lambda, c.nbhd_radius, opts);
  cell.values["cap"] = cap.primal;
  cell.values["ccap"] = cc.primal;
  cell.values["ratio"] = cc.primal / cap.primal;
  cell.values["first_ok"] = cap.primal <= cc.primal * (1 + c.tol) + c.tol ? 1.0 : 0.0;
  cell.diagnostics["cap_gap"] = cap.gap;
  cell.diagnostics["ccap_gap"] = cc.gap;
  cell.diagnostics["ccap_dual"] = cc.dual;
}

inline void run_constants_cell(const StudyConfig& c, const Space& space, StudyCell& cell) {
  const auto family = smooth_family(space, c.samples, c.seed);
  const double h = space.spacing();
  const double quarter = space.diameter() / 4;
  const auto t_grid = log_grid(h * h, std::max(4 * h * h, 0.5 * quarter * quarter), 6);
  const auto log_grad = log_gradient_constant(space, family, t_grid, c.alpha);
  double m_inf = 0, m_p = 0;
  const double ps[] = {kInf, c.p};
  for (const auto& f : family) {
    const auto rep = semigroup_maximal(space, f, t_grid, ps);
    m_inf = std::max(m_inf, rep.ratios[0].second);
    m_p = std::max(m_p, rep.ratios[1].second);
  }
  const auto heat = gaussian_heat_fit(space, 0, log_grid(4 * h * h, 0.8 * quarter * quarter, 5));
  const auto grad = gradient_p_constant(space, family, c.p, c.lambda, t_grid);
  cell.values = {{"log_gradient", log_grad.constant}, {"maximal_inf", m_inf},
                 {"maximal_p", m_p},                  {"gaussian_slope", heat.constant},
                 {"c8", heat.extra.at("c8")},         {"c9", heat.extra.at("c9")},
                 {"gradient_p", grad.constant},       {"gradient_semigroup", grad.extra.at("semigroup")}};
  cell.diagnostics["skipped"] = log_grad.skipped + heat.skipped + grad.skipped;
  cell.diagnostics["gaussian_residual"] = heat.residual;
}

inline void run_potentials_cell(const StudyConfig& c, const Space& space, const PointList& atoms, StudyCell& cell) {
  const auto nu = DiscreteMeasure::uniform(snap_all(space, atoms), 1.0);
  const auto ratios = inequality_ratios(space, nu, c.s, c.p, default_window(space));
  const double q = conjugate_exponent(c.p);
  const double lhs = nu.integrate(mazya_khavin_potential(space, nu, c.lambda, c.p));
  const double rhs = lp_power(measure_potential(space, nu, c.lambda), space.mu(), q);
  cell.values = {{"wolff", ratios.wolff},
                 {"muckenhoupt_wheeden", ratios.muckenhoupt_wheeden},
                 {"giraud", ratios.giraud},
                 {"fubini_residual", std::abs(lhs - rhs) / rhs}};
  cell.diagnostics["atoms"] = nu.atoms();
  cell.diagnostics["skipped"] = ratios.skipped;
}

inline void run_hausdorff_cell(const StudyConfig& c, const Space& space, const PointList& pts, StudyCell& cell) {
  const auto spec = to_set_spec(c.set, c.space.d);
  const double delta = 1.0 / static_cast<double>(cell.n);
  cell.values = {{"nodes", static_cast<double>(realize_set(spec, space).size())},
                 {"cubes", static_cast<double>(occupied_cubes(pts, delta))},
                 {"hausdorff_sum", hausdorff_sum(pts, to_gauge(c.gauge), delta)}};
}

inline void summarize(StudyReport& r) {
  const auto& c = r.config;
  switch (c.study) {
    case StudyKind::Threshold: {
      std::vector<double> lx, ly;
      bool all_zero = true;
      for (auto& cell : r.cells) {
        if (cell.ok && cell.values.at("primal") > 0) {
          all_zero = false;
          lx.push_back(std::log(static_cast<double>(cell.n)));
          ly.push_back(std::log(cell.values.at("primal")));
        } else if (!cell.ok) {
          all_zero = false;
        }
        cell.values["slope"] = lx.size() >= 2 ? fit_line(lx, ly).slope : std::numeric_limits<double>::quiet_NaN();
      }
      if (all_zero) {
        r.classification = "trivial";
      } else if (lx.size() >= 2) {
        const auto fit = fit_line(lx, ly);
        r.summary["slope"] = fit.slope;
        r.summary["residual"] = fit.residual;
        r.classification = to_string(classify_slope(fit.slope));
      } else {
        r.classification = "indeterminate";
      }
      if (c.space.kind == "heisenberg" && c.space.n.back() >= 4)
        r.summary["volume_exponent"] = heisenberg_growth_exponent(static_cast<int>(c.space.n.back()));
      break;
    }
    case StudyKind::Comparison: {
      double worst = 0, violations = 0, spread_max = 0;
      std::map<Index, std::pair<double, double>> per_sample;
      for (const auto& cell : r.cells) {
        if (!cell.ok) continue;
        if (cell.values.at("first_ok") < 0.5) violations += 1;
        const double ratio = cell.values.at("ratio");
        if (!std::isfinite(ratio)) continue;
        worst = std::max(worst, ratio);
        auto [it, fresh] = per_sample.try_emplace(cell.sample, ratio, ratio);
        if (!fresh) it->second = {std::min(it->second.first, ratio), std::max(it->second.second, ratio)};
      }
      for (const auto& [s, mm] : per_sample) spread_max = std::max(spread_max, mm.second / mm.first);
      r.summary["max_ratio"] = worst;
      r.summary["violations"] = violations;
      r.summary["ratio_spread"] = spread_max;
      r.classification = violations == 0 ? "first comparison holds" : "first comparison violated";
      break;
    }
    case StudyKind::Constants:
    case StudyKind::Potentials: {
      const double limit = c.study == StudyKind::Constants ? 1.1 : 2.0;
      bool stable = true;
      for (const auto& col : r.columns) {
        if (col == "fubini_residual") continue;
        const double s = spread(r.cells, col);
        r.summary[col + "_spread"] = s;
        if (std::isfinite(s) && s > limit) stable = false;
      }
      r.classification = stable ? "refinement stable" : "refinement drifting";
      break;
    }
    case StudyKind::Hausdorff: {
      const auto spec = to_set_spec(c.set, c.space.d);
      const auto gauge = to_gauge(c.gauge);
      const auto pts = set_points(spec);
      if (pts.size() >= 2) {
        try {
          const auto fit = dimension_fit(pts);
          r.summary["dimension"] = fit.dimension;
          r.summary["dimension_residual"] = fit.residual;
        } catch (const InvalidArgument&) {
          r.summary["dimension"] = std::numeric_limits<double>::quiet_NaN();
        }
      }
      const auto cond = condh_integral(gauge, 40);
      r.summary["condh"] = cond.value;
      r.summary["condh_tail_exponent"] = cond.tail_exponent;
      r.summary["condh_divergent"] = cond.divergent ? 1.0 : 0.0;
      if (std::holds_alternative<CantorDustSet>(spec.shape))
        r.summary["frostman_ratio"] = natural_measure(spec).frostman_ratio;
      r.classification = cond.divergent ? "condh divergent" : "condh finite";
      break;
    }
  }
}

}  // namespace detail

/// Runs every cell of the study. Refuses with BudgetError before allocating
/// when a cell exceeds the node budget; solver failures mark the cell failed.
inline StudyReport run_study(const StudyConfig& config, KernelCache* cache = nullptr) {
  validate_config(config);
  check_budget(config);
  const auto start = std::chrono::steady_clock::now();
  KernelCache local_cache = KernelCache::from_environment();
  if (!cache) cache = &local_cache;

  StudyReport r;
  r.config = config;
  r.keys = study_keys(config.study);
  r.columns = study_columns(config.study);
  const auto& levels = config.space.n;
  const int d = config.space.d;

  std::vector<PointList> patterns;
  if (config.study == StudyKind::Comparison) {
    if (config.set.kind == "random")
      patterns = detail::random_patterns(config.samples, config.set.count, d, config.seed);
    else if (config.set.kind != "empty")
      patterns = {set_points(detail::to_set_spec(config.set, d))};
    else
      patterns = {PointList{}};
  } else if (config.study == StudyKind::Potentials) {
    patterns = detail::random_patterns(1, config.samples, static_cast<int>(ambient_dimension(config.space)),
                                       config.seed);
  } else if (config.study == StudyKind::Hausdorff) {
    patterns = {set_points(detail::to_set_spec(config.set, d))};
  }
  const Index per_level = config.study == StudyKind::Comparison ? static_cast<Index>(patterns.size()) : 1;
  for (std::size_t i = 0; i < levels.size(); ++i)
    for (Index s = 0; s < per_level; ++s) {
      StudyCell cell;
      cell.level = static_cast<int>(i);
      cell.n = levels[i];
      cell.sample = s;
      r.cells.push_back(std::move(cell));
    }

  std::vector<std::optional<Space>> spaces(levels.size());
  parallel_for(static_cast<Index>(levels.size()), [&](Index i) {
    try {
      spaces[static_cast<std::size_t>(i)].emplace(build_study_space(config.space, levels[static_cast<std::size_t>(i)]));
    } catch (const InvalidArgument&) {
    }
  });

  parallel_for(static_cast<Index>(r.cells.size()), [&](Index idx) {
    auto& cell = r.cells[static_cast<std::size_t>(idx)];
    const auto& space = spaces[static_cast<std::size_t>(cell.level)];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (!space) throw InvalidArgument("space construction failed");
      switch (config.study) {
        case StudyKind::Threshold: detail::run_threshold_cell(config, *space, cell, cache); break;
        case StudyKind::Comparison: {
          const auto& pts = patterns[static_cast<std::size_t>(cell.sample)];
          detail::run_comparison_cell(config, *space, pts.empty() ? std::vector<Index>{} : detail::snap_all(*space, pts),
                                      cell, cache);
          break;
        }
        case StudyKind::Constants: detail::run_constants_cell(config, *space, cell); break;
        case StudyKind::Potentials: detail::run_potentials_cell(config, *space, patterns.front(), cell); break;
        case StudyKind::Hausdorff: detail::run_hausdorff_cell(config, *space, patterns.front(), cell); break;
      }
    } catch (const SolverError& e) {
      cell.ok = false;
      cell.reason = e.what();
    } catch (const InvalidArgument& e) {
      cell.ok = false;
      cell.reason = e.what();
    }
    if (!cell.ok) {
      cell.values.clear();
      for (const auto& col : r.columns) cell.values[col] = std::numeric_limits<double>::quiet_NaN();
    }
    cell.diagnostics["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  detail::summarize(r);
  r.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  r.timestamp = buf;
  return r;
}

// Emission -----------------------------------------------------------------

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

namespace detail {

inline std::string key_value(const StudyCell& c, const std::string& key) {
  if (key == "level") return std::to_string(c.level);
  if (key == "n") return std::to_string(c.n);
  return std::to_string(c.sample);
}

inline nlohmann::json number_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

/// One row per cell in fixed column order; no timing or provenance fields.
inline std::string report_csv(const StudyReport& r) {
  std::ostringstream out;
  bool first = true;
  for (const auto& k : r.keys) out << (std::exchange(first, false) ? "" : ",") << k;
  for (const auto& c : r.columns) out << "," << c;
  out << ",status,reason\n";
  for (const auto& cell : r.cells) {
    first = true;
    for (const auto& k : r.keys) out << (std::exchange(first, false) ? "" : ",") << detail::key_value(cell, k);
    for (const auto& c : r.columns) {
      const auto it = cell.values.find(c);
      out << "," << format_number(it == cell.values.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
    }
    out << "," << (cell.ok ? "ok" : "failed") << "," << csv_field(cell.reason) << "\n";
  }
  return out.str();
}

/// study,level,n,sample,series,value with one row per finite value.
inline std::string report_long_csv(const StudyReport& r) {
  std::ostringstream out;
  out << "study,level,n,sample,series,value\n";
  const auto kind = to_string(r.config.study);
  for (const auto& cell : r.cells) {
    if (!cell.ok) continue;
    for (const auto& c : r.columns) {
      const auto it = cell.values.find(c);
      if (it == cell.values.end() || !std::isfinite(it->second)) continue;
      out << kind << "," << cell.level << "," << cell.n << "," << cell.sample << "," << c << ","
          << format_number(it->second) << "\n";
    }
  }
  return out.str();
}

inline nlohmann::json report_to_json(const StudyReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [k, v] : c.values) values[k] = detail::number_json(v);
    cells.push_back({{"level", c.level},
                     {"n", c.n},
                     {"sample", c.sample},
                     {"status", c.ok ? "ok" : "failed"},
                     {"reason", c.reason},
                     {"values", values},
                     {"diagnostics", c.diagnostics}});
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [k, v] : r.summary) summary[k] = detail::number_json(v);
  return {{"tool", "caplab"},
          {"version", r.version},
          {"timestamp", r.timestamp},
          {"wall_clock_s", r.wall_clock},
          {"seed", r.config.seed},
          {"study", to_string(r.config.study)},
          {"config", config_to_json(r.config)},
          {"keys", r.keys},
          {"columns", r.columns},
          {"cells", cells},
          {"summary", summary},
          {"classification", r.classification}};
}

inline StudyReport report_from_json(const nlohmann::json& j) {
  StudyReport r;
  r.version = j.at("version");
  r.timestamp = j.at("timestamp");
  r.wall_clock = j.at("wall_clock_s");
  r.config = config_from_json(j.at("config"));
  r.keys = j.at("keys").get<std::vector<std::string>>();
  r.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    StudyCell cell;
    cell.level = c.at("level");
    cell.n = c.at("n");
    cell.sample = c.at("sample");
    cell.ok = c.at("status") == "ok";
    cell.reason = c.at("reason");
    for (const auto& [k, v] : c.at("values").items()) cell.values[k] = detail::number_from(v);
    cell.diagnostics = c.at("diagnostics");
    r.cells.push_back(std::move(cell));
  }
  for (const auto& [k, v] : j.at("summary").items()) r.summary[k] = detail::number_from(v);
  r.classification = j.at("classification");
  return r;
}

struct ReportPaths {
  std::string csv;
  std::string json;
  std::string long_csv;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Writes <name>.csv, <name>.json and <name>_long.csv into `dir`.
inline ReportPaths emit_report(const StudyReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = dir + "/" + r.config.name;
  ReportPaths paths{stem + ".csv", stem + ".json", stem + "_long.csv"};
  write_text(paths.csv, report_csv(r));
  write_text(paths.json, report_to_json(r).dump(2) + "\n");
  write_text(paths.long_csv, report_long_csv(r));
  return paths;
}

inline StudyReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return report_from_json(nlohmann::json::parse(in));
}

}  // namespace caplab
