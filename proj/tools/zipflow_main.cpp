#include <chrono>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zipflow/zipflow.hpp"

using namespace zipflow;

namespace {

struct Options {
  std::string config_path;
  std::string pi;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string json_path;
  std::string csv_path;
};

struct Output {
  json results;
  Table table;
  std::optional<std::uint64_t> seed;
  int workers = 1;
};

Config load(const std::string& command, const Options& o) {
  const Schema schema = cfg::schema_for(command);
  Config c = o.config_path.empty() ? Config::parse_string("", schema) : Config::load(o.config_path, schema);
  for (const auto& s : o.overrides) c.set(s);
  if (!o.pi.empty()) {
    const std::string section = command == "rauzy-class" ? "rauzy" : command == "zr-orbit" ? "orbit" : "teich";
    c.set(section + ".permutation=" + o.pi);
  }
  const std::string seed_section = command == "teich-demo" ? "teich" : command == "zr-orbit" ? "orbit" : "mc";
  if (o.seed && schema.count(seed_section)) c.set(seed_section + ".seed=" + std::to_string(*o.seed));
  const std::string worker_section = command == "teich-demo" ? "teich" : "mc";
  if (o.workers && schema.count(worker_section)) c.set(worker_section + ".workers=" + std::to_string(*o.workers));
  return c;
}

Output rauzy_class_cmd(Config& c) {
  const Permutation pi = Permutation::parse(c.str("rauzy", "permutation"));
  c.record("rauzy", "permutation", pi.str());
  const auto cap = static_cast<std::size_t>(c.integer("rauzy", "cap", static_cast<std::int64_t>(kDefaultClassCap)));
  const RauzyClass rc = rauzy_class(pi, cap);
  Output out;
  out.results = to_json(rc);
  out.table.header = {"source", "label", "target", "det"};
  for (const auto& e : rc.edges)
    out.table.rows.push_back({rc.members[e.source].str(), std::string(1, to_char(e.label)), rc.members[e.target].str(),
                              static_cast<std::int64_t>(e.matrix.determinant())});
  return out;
}

Output zr_orbit_cmd(Config& c) {
  const Permutation pi = Permutation::parse(c.str("orbit", "permutation"));
  c.record("orbit", "permutation", pi.str());
  const auto steps = static_cast<std::size_t>(c.integer("orbit", "steps", 100));
  Output out;
  ZipperedRectangle x;
  if (c.has("orbit", "lambda") || c.has("orbit", "delta")) {
    x = ZipperedRectangle{c.reals("orbit", "lambda", {}), pi, c.reals("orbit", "delta", {})};
    x.validate();
  } else {
    require(c.has("orbit", "seed"), "[orbit] seed is required when lambda and delta are not given");
    const std::uint64_t seed = c.unsigned_integer("orbit", "seed");
    c.record("orbit", "seed", std::to_string(seed));
    out.seed = seed;
    RandomStream rng(seed, 0);
    x = sample_zippered(pi, rng);
  }
  const Itinerary it = symbolic_itinerary(x, steps);
  out.results = json{{"start", json{{"lambda", io::nums(x.lambda)}, {"delta", io::nums(x.delta)}, {"area", io::num(area(x))}}},
                     {"steps", it.letters.size()},
                     {"total_time", io::num(it.total_time)},
                     {"error", it.error ? json(*it.error) : json(nullptr)},
                     {"end", json{{"permutation", it.last.pi.str()},
                                  {"lambda", io::nums(it.last.lambda)},
                                  {"delta", io::nums(it.last.delta)},
                                  {"area", io::num(area(it.last))}}}};
  out.table.header = {"step", "branch", "winner", "roof_time"};
  for (std::size_t k = 0; k < it.letters.size(); ++k)
    out.table.rows.push_back({static_cast<std::uint64_t>(k), std::string(1, to_char(it.letters[k].branch)),
                              static_cast<std::int64_t>(it.letters[k].winner), it.roof_times[k]});
  return out;
}

Output livsic_cmd(Config& c) {
  const int L = cfg::alphabet(c);
  const Observable phi = cfg::table_observable(c, "observable", L);
  const int p_max = static_cast<int>(c.integer("livsic", "p_max", 8));
  const double tol = c.real("livsic", "tol", kPeriodicSumTolerance);
  const LivsicVerdict v = livsic_test(phi, p_max, tol);
  Output out;
  out.results = to_json(v);
  out.results["coboundary_defect"] = io::num(coboundary_defect(phi));
  out.table.header = {"coboundary", "reached_period", "partial", "max_abs_sum", "witness_period", "witness_sum"};
  out.table.rows.push_back({std::string(v.coboundary ? "yes" : "no"), static_cast<std::int64_t>(v.reached_period),
                            std::string(v.partial ? "yes" : "no"), v.max_abs_sum,
                            static_cast<std::int64_t>(v.witness ? v.witness->period : 0),
                            v.witness ? v.witness->sum : NAN});
  return out;
}

Output pressure_cmd(Config& c) {
  const int L = cfg::alphabet(c);
  const Observable psi = cfg::table_observable(c, "potential", L);
  const MarkovGibbsMeasure mu = equilibrium_measure(psi);
  Output out;
  out.results = json{{"pressure", io::num(mu.pressure())},
                     {"entropy", io::num(mu.entropy())},
                     {"potential_mean", io::num(mu.integrate(psi))},
                     {"gibbs_constant", io::num(mu.gibbs_constant())},
                     {"gibbs_checked_length", mu.gibbs_checked_length()}};
  out.table.header = {"t", "pressure", "slope"};
  if (c.has_section("observable")) {
    const Observable phi = cfg::table_observable(c, "observable", L);
    const auto grid = c.reals("pressure", "t_grid", {-2, -1, -0.5, 0, 0.5, 1, 2});
    json curve = json::array();
    for (double t : grid) {
      const auto [P, dP] = pressure_and_slope(psi, phi, t);
      out.table.rows.push_back({t, P, dP});
      curve.push_back(json{{"t", t}, {"pressure", io::num(P)}, {"slope", io::num(dP)}});
    }
    out.results["curve"] = curve;
  }
  return out;
}

Output rate_bound_cmd(Config& c) {
  const int L = cfg::alphabet(c);
  const Observable psi = cfg::table_observable(c, "potential", L);
  const Observable phi = cfg::table_observable(c, "observable", L);
  const auto eps = c.reals("rate", "eps");
  c.record("rate", "eps", c.str("rate", "eps"));
  Output out;
  out.results = json::array();
  out.table.header = {"eps", "value", "value_strict", "rate_plus", "rate_minus", "mean", "degenerate"};
  for (double e : eps) {
    require(e > 0.0, "[rate] eps entries must be positive");
    const DeviationBound b = deviation_bound(psi, phi, e);
    json j = to_json(b);
    j["eps"] = e;
    out.results.push_back(j);
    out.table.rows.push_back({e, b.value, b.value_strict, b.rate_plus, b.rate_minus, b.mean,
                              std::string(b.degenerate ? "yes" : "no")});
  }
  return out;
}

Output deviation_output(const DeviationReport& r, const McSettings& mc) {
  Output out;
  out.results = to_json(r);
  out.table = to_table(r);
  out.seed = mc.seed;
  out.workers = detail::resolve_workers(mc.workers);
  return out;
}

Output ld_shift_cmd(Config& c) {
  const ShiftExperiment e = cfg::shift_experiment(c);
  Output out = deviation_output(deviate_shift(e), e.mc);
  if (e.mode == EstimatorMode::exact) out.seed.reset();
  return out;
}

Output ld_flow_cmd(Config& c) {
  const FlowExperiment e = cfg::flow_experiment(c);
  return deviation_output(deviate_flow(e), e.mc);
}

Output lap_dev_cmd(Config& c) {
  const LapExperiment e = cfg::lap_experiment(c);
  Output out = deviation_output(lap_deviation(e), e.mc);
  out.results["lap_law"] = to_json(lap_law(e.psi, e.r, e.T_grid.back(), e.mc));
  return out;
}

Output teich_cmd(Config& c) {
  const TeichConfig t = cfg::teich(c);
  const TeichReport r = teich_demo(t);
  Output out;
  out.results = to_json(r);
  out.seed = t.seed;
  out.workers = detail::resolve_workers(t.workers);
  out.table.header = {"length", "blocks", "deviation_mass"};
  for (std::size_t i = 0; i < r.lengths.size(); ++i)
    out.table.rows.push_back({static_cast<std::uint64_t>(r.lengths[i]), r.blocks[i], r.deviation_mass[i]});
  return out;
}

int run(const std::string& command, const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Config c = load(command, o);
  Output out;
  if (command == "rauzy-class") out = rauzy_class_cmd(c);
  else if (command == "zr-orbit") out = zr_orbit_cmd(c);
  else if (command == "livsic") out = livsic_cmd(c);
  else if (command == "pressure") out = pressure_cmd(c);
  else if (command == "rate-bound") out = rate_bound_cmd(c);
  else if (command == "ld-shift") out = ld_shift_cmd(c);
  else if (command == "ld-flow") out = ld_flow_cmd(c);
  else if (command == "lap-dev") out = lap_dev_cmd(c);
  else out = teich_cmd(c);

  for (const auto& key : c.unused()) std::cerr << "warning: " << key << " was not used by " << command << "\n";

  Provenance p;
  p.subcommand = command;
  p.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  p.seed = out.seed;
  p.workers = out.workers;
  p.config = c.echo();
  const std::string doc = envelope(p, std::move(out.results)).dump(2) + "\n";
  if (o.json_path.empty()) std::cout << doc;
  else write_file(o.json_path, doc);
  if (!o.csv_path.empty()) write_file(o.csv_path, csv_string(out.table, &p));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large-deviation experiments for suspension flows over shifts and zippered rectangles"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Options o;
  const std::map<std::string, std::string> help{
      {"rauzy-class", "Enumerate a Rauzy class with its edge matrices"},
      {"zr-orbit", "Follow renormalized induction on a zippered rectangle"},
      {"livsic", "Periodic-orbit coboundary test"},
      {"pressure", "Pressure, equilibrium state and pressure curve"},
      {"rate-bound", "Variational deviation bound"},
      {"ld-shift", "Deviation probabilities of Birkhoff sums over the shift"},
      {"ld-flow", "Deviation probabilities of flow integrals"},
      {"lap-dev", "Lap-number deviations"},
      {"teich-demo", "Renormalized-induction demonstration"},
  };
  for (const auto& name : cfg::commands()) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("-c,--config", o.config_path, "Experiment file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "Override section.key=value (repeatable)");
    sub->add_option("--seed", o.seed, "Seed for stochastic subcommands");
    sub->add_option("--workers", o.workers, "Worker threads (default from ZIPFLOW_WORKERS)")->check(CLI::Range(1, 4096));
    sub->add_option("--json,--out", o.json_path, "JSON report path (default: stdout)");
    if (name == "rauzy-class" || name == "zr-orbit" || name == "teich-demo")
      sub->add_option("--pi", o.pi, "Permutation, e.g. \"3,2,1\"");
    sub->add_option("--csv", o.csv_path, "CSV table path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ResourceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
