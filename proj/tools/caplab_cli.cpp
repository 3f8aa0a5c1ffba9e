#include "caplab/caplab.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace caplab;

namespace {

enum Exit { kOk = 0, kConfig = 1, kSolver = 2, kBudget = 3 };

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<double> lambda;
  std::optional<double> p;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "YAML study configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides output.dir)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--tol", o.tol, "duality-gap tolerance");
  cmd->add_option("--lambda", o.lambda, "resolvent parameter");
  cmd->add_option("--p", o.p, "capacity exponent");
}

StudyConfig load(const Overrides& o) {
  auto c = parse_config(o.config);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.tol) c.tol = *o.tol;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.p) c.p = *o.p;
  validate_config(c);
  return c;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// A flat table emitted as <stem>.csv plus <stem>.json with provenance.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  nlohmann::json extra = nlohmann::json::object();

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }

  void emit(const StudyConfig& c, const std::string& command) const {
    std::filesystem::create_directories(c.out_dir);
    const std::string stem = c.out_dir + "/" + c.name + "_" + command;
    std::ostringstream csv;
    for (std::size_t i = 0; i < columns.size(); ++i) csv << (i ? "," : "") << columns[i];
    csv << "\n";
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json jr = nlohmann::json::object();
      for (std::size_t i = 0; i < row.size(); ++i) {
        csv << (i ? "," : "") << csv_field(row[i]);
        jr[columns[i]] = row[i];
      }
      csv << "\n";
      jrows.push_back(jr);
    }
    write_text(stem + ".csv", csv.str());
    const nlohmann::json j{{"tool", "caplab"},     {"version", kVersion}, {"timestamp", timestamp()},
                           {"command", command},   {"seed", c.seed},      {"config", config_to_json(c)},
                           {"columns", columns},   {"rows", jrows},       {"extra", extra}};
    write_text(stem + ".json", j.dump(2) + "\n");
    std::cout << stem << ".csv\n" << stem << ".json\n";
  }
};

std::string num(double v) { return format_number(v); }

int cmd_space_build(const StudyConfig& c) {
  check_budget(c);
  std::filesystem::create_directories(c.out_dir);
  for (Index n : c.space.n) {
    const auto space = build_study_space(c.space, n);
    std::cout << save_space(space, c.out_dir) << "\n";
  }
  return kOk;
}

int cmd_kernel(const StudyConfig& c) {
  check_budget(c);
  KernelCache cache = KernelCache::from_environment();
  Table t{{"n", "node", "distance", "value"}};
  for (Index n : c.space.n) {
    const auto space = build_study_space(c.space, n);
    const auto col = resolvent_column(space, 0, c.lambda, &cache);
    const Eigen::VectorXd dist = space.distances_from(0);
    for (Index y = 0; y < space.size(); ++y)
      t.add({std::to_string(n), std::to_string(y), num(dist[y]), num((*col)[y])});
    try {
      const auto fit = kernel_exponent_fit(space, c.lambda, 0);
      t.extra["exponent"][std::to_string(n)] = {{"slope", fit.constant}, {"residual", fit.residual}};
    } catch (const InvalidArgument& e) {
      t.extra["exponent"][std::to_string(n)] = {{"skipped", e.what()}};
    }
  }
  t.emit(c, "kernel");
  return kOk;
}

int cmd_capacity(const StudyConfig& c) {
  check_budget(c);
  KernelCache cache = KernelCache::from_environment();
  CapacityOptions opts;
  opts.gap_tolerance = c.tol;
  opts.cache = &cache;
  Table t{{"n", "set_size", "cap_primal", "cap_dual", "gap", "ccap", "ccap_dual"}};
  for (Index n : c.space.n) {
    const auto space = build_study_space(c.space, n);
    std::vector<Index> set;
    if (c.space.kind == "heisenberg") set = {0};
    else if (c.set.kind == "random") set = detail::snap_all(space, detail::random_patterns(1, c.set.count, c.space.d, c.seed)[0]);
    else if (c.set.kind != "empty") set = realize_set(detail::to_set_spec(c.set, c.space.d), space);
    const auto pr = CapacityProblem::global(space, set, c.lambda, opts);
    const auto primal = cap_primal(pr, c.p, opts);
    const auto dual = cap_dual(pr, c.p, opts);
    const auto cc = ccap(space, set, c.p, c.lambda, c.nbhd_radius, opts);
    const double lower = std::max(primal.dual, dual.dual);
    t.add({std::to_string(n), std::to_string(set.size()), num(primal.primal), num(lower),
           num(relative_gap(primal.primal, lower)), num(cc.primal), num(cc.dual)});
  }
  t.emit(c, "capacity");
  return kOk;
}

int cmd_truncate(const StudyConfig& c) {
  check_budget(c);
  const TruncationFn F(0.5);
  Table t{{"n", "truncation_ratio", "gamma_ratio", "chain_residual"}};
  t.extra["t0"] = F.t0();
  t.extra["bound"] = F.bound();
  for (Index n : c.space.n) {
    const auto space = build_study_space(c.space, n);
    double trunc = 0, gamma = 0, chain = 0;
    for (const auto& f : smooth_family(space, c.samples, c.seed)) {
      trunc = std::max(trunc, truncate_potential(space, f, c.lambda, F, c.p).ratio);
      gamma = std::max(gamma, gamma_quotient_norm(space, f, c.lambda, c.p).ratio);
      chain = std::max(chain, chain_rule_residual(space, f, c.lambda, F));
    }
    t.add({std::to_string(n), num(trunc), num(gamma), num(chain)});
  }
  t.emit(c, "truncate");
  return kOk;
}

int cmd_study(StudyConfig c, std::optional<StudyKind> kind) {
  if (kind) {
    c.study = *kind;
    validate_config(c);
  }
  const auto report = run_study(c);
  const auto paths = emit_report(report, c.out_dir);
  std::cout << paths.csv << "\n" << paths.json << "\n" << paths.long_csv << "\n";
  std::cout << "classification: " << report.classification << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caplab: capacities, potentials and removable sets on discrete spaces"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Overrides o;

  auto* space_cmd = app.add_subcommand("space", "space utilities");
  space_cmd->require_subcommand(1);
  auto* build_cmd = space_cmd->add_subcommand("build", "build and save the configured spaces");
  add_common(build_cmd, o);
  auto* kernel_cmd = app.add_subcommand("kernel", "resolvent kernel column at node 0");
  add_common(kernel_cmd, o);
  auto* cap_cmd = app.add_subcommand("capacity", "cap and ccap of the configured set");
  add_common(cap_cmd, o);
  auto* pot_cmd = app.add_subcommand("potential", "potential inequality ratios (potentials study)");
  add_common(pot_cmd, o);
  auto* trunc_cmd = app.add_subcommand("truncate", "truncation ratios on a smooth family");
  add_common(trunc_cmd, o);
  auto* haus_cmd = app.add_subcommand("hausdorff", "covering sums and dimension fits (hausdorff study)");
  add_common(haus_cmd, o);
  auto* study_cmd = app.add_subcommand("study", "configured studies");
  study_cmd->require_subcommand(1);
  auto* run_cmd = study_cmd->add_subcommand("run", "run the configured study");
  add_common(run_cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto c = load(o);
    if (*build_cmd) return cmd_space_build(c);
    if (*kernel_cmd) return cmd_kernel(c);
    if (*cap_cmd) return cmd_capacity(c);
    if (*pot_cmd) return cmd_study(c, StudyKind::Potentials);
    if (*trunc_cmd) return cmd_truncate(c);
    if (*haus_cmd) return cmd_study(c, StudyKind::Hausdorff);
    return cmd_study(c, std::nullopt);
  } catch (const BudgetError& e) {
    std::cerr << "budget refusal: " << e.what() << " (estimate " << static_cast<long long>(e.estimate())
              << " nodes)\n";
    return kBudget;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
}
