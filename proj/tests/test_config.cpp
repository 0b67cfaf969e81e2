#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "zipflow/config.hpp"
#include "zipflow/report_io.hpp"

using namespace zipflow;

namespace {

const char* kShift = R"(# coin flips
[model]
alphabet = 2

[potential]
bernoulli = 1 1   # fair

[observable]
table = 1 -1

[experiment]
eps = 0.5
n_grid = 10 20 40

[mc]
samples = 2000
seed = 42
)";

std::size_t data_lines(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n;
}

}  // namespace

TEST(ConfigParse, SectionsListsAndComments) {
  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  EXPECT_EQ(c.integer("model", "alphabet"), 2);
  EXPECT_EQ(c.reals("potential", "bernoulli"), (std::vector<double>{1, 1}));
  EXPECT_EQ(c.integers("experiment", "n_grid"), (std::vector<std::int64_t>{10, 20, 40}));
  const ShiftExperiment e = cfg::shift_experiment(c);
  EXPECT_EQ(e.mc.seed, 42u);
  EXPECT_EQ(e.mc.samples, 2000u);
  EXPECT_NEAR(e.psi.at_index(0), std::log(0.5), 1e-15);
}

TEST(ConfigParse, UnknownKeyNamesKeyAndPosition) {
  try {
    Config::parse_string("[model]\nalphabet = 2\n  colour = red\n", cfg::schema_for("ld-shift"));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 3);
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(ConfigParse, StructuralErrors) {
  const Schema s = cfg::schema_for("ld-shift");
  EXPECT_THROW(Config::parse_string("[nope]\n", s), ParseError);
  EXPECT_THROW(Config::parse_string("alphabet = 2\n", s), ParseError);
  EXPECT_THROW(Config::parse_string("[model\n", s), ParseError);
  EXPECT_THROW(Config::parse_string("[model]\nalphabet\n", s), ParseError);
  EXPECT_THROW(Config::parse_string("[model]\nalphabet = 2\nalphabet = 3\n", s), ParseError);
  Config c = Config::parse_string("[model]\nalphabet = two\n", s);
  EXPECT_THROW(c.integer("model", "alphabet"), ParseError);
}

TEST(ConfigParse, EmptyFilePlusOverrides) {
  Config c = Config::parse_string("", cfg::schema_for("ld-shift"));
  for (const char* o : {"model.alphabet=2", "potential.bernoulli=1 1", "observable.table=1 -1",
                        "experiment.n_grid=10 20 30", "mc.samples=1000", "mc.seed=7"})
    c.set(o);
  const ShiftExperiment e = cfg::shift_experiment(c);
  EXPECT_EQ(e.n_grid.size(), 3u);
  EXPECT_EQ(e.mc.seed, 7u);
}

TEST(ConfigParse, OverridesReplaceFileValues) {
  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  c.set("experiment.eps=0.25");
  EXPECT_EQ(cfg::shift_experiment(c).eps, 0.25);
  EXPECT_THROW(c.set("experiment.epsilon=0.25"), ValidationError);
  EXPECT_THROW(c.set("nosuch.eps=0.25"), ValidationError);
  EXPECT_THROW(c.set("eps=0.25"), ValidationError);
}

TEST(ConfigParse, WrongTableArity) {
  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  c.set("observable.depth=2");
  try {
    cfg::shift_experiment(c);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("[observable] table"), std::string::npos);
  }
}

TEST(ConfigParse, SeedRequiredForSampling) {
  Config no_seed = Config::parse_string(std::string(kShift).substr(0, std::string(kShift).find("seed")),
                                        cfg::schema_for("ld-shift"));
  EXPECT_THROW(cfg::shift_experiment(no_seed), ValidationError);
  no_seed.set("experiment.mode=exact");
  EXPECT_NO_THROW(cfg::shift_experiment(no_seed));
}

TEST(ConfigParse, EchoIncludesDefaults) {
  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  cfg::shift_experiment(c);
  const auto& echo = c.echo();
  EXPECT_EQ(echo.at("mc").at("block"), "4096");
  EXPECT_EQ(echo.at("mc").at("sampler"), "importance");
  EXPECT_EQ(echo.at("experiment").at("mode"), "mc");
  EXPECT_EQ(echo.at("mc").at("seed"), "42");
  EXPECT_TRUE(c.unused().empty());
}

TEST(ConfigParse, FiberPieces) {
  Config c = Config::parse_string(
      "[model]\nalphabet = 2\n[potential]\nbernoulli = 1 1\n[roof]\ntable = 1 2\n"
      "[flow_observable]\ndepth = 1\npiece = 0 : 0 inf : 1\npiece = 1 : 0 1 : -1\npiece = 1 : 1 inf : 0 -0.5\n"
      "[experiment]\nT_grid = 10 20 40\n[mc]\nsamples = 1000\nseed = 1\n",
      cfg::schema_for("ld-flow"));
  const FlowExperiment e = cfg::flow_experiment(c);
  const Word zero{0}, one{1};
  EXPECT_EQ(e.phi.value(zero, 0.3), 1.0);
  EXPECT_EQ(e.phi.value(one, 0.3), -1.0);
  EXPECT_EQ(e.phi.value(one, 1.5), -0.75);
  EXPECT_NEAR(phi_r(e.phi, one, e.r), -1.0 - 0.25 * 3.0, 1e-14);

  Config bad = Config::parse_string("[model]\nalphabet = 2\n[flow_observable]\npiece = 2 : 0 1 : 1\n", cfg::schema_for("ld-flow"));
  EXPECT_THROW(cfg::flow_observable(bad, 2), ParseError);
}

TEST(Report, CsvRowsAndPrecision) {
  EXPECT_EQ(io::format(0.1), "0.10000000000000001");
  DeviationReport empty;
  const std::string head = csv_string(to_table(empty));
  EXPECT_EQ(data_lines(head), 1u);
  EXPECT_EQ(head.substr(0, 9), "x,method,");

  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  const DeviationReport rep = deviate_shift(cfg::shift_experiment(c));
  Provenance p;
  p.subcommand = "ld-shift";
  p.config = c.echo();
  const std::string csv = csv_string(to_table(rep), &p);
  EXPECT_EQ(data_lines(csv), 1 + rep.points.size());
  EXPECT_NE(csv.find("# mc.seed = 42"), std::string::npos);
}

TEST(Report, JsonRoundTrip) {
  Config c = Config::parse_string(kShift, cfg::schema_for("ld-shift"));
  c.set("experiment.mode=both");
  const DeviationReport rep = deviate_shift(cfg::shift_experiment(c));
  Provenance p;
  p.subcommand = "ld-shift";
  p.seed = 42;
  p.workers = 1;
  p.config = c.echo();
  const json doc = envelope(p, to_json(rep));
  const json back = json::parse(doc.dump(2));
  const DeviationReport r2 = deviation_report_from(back.at("results"));
  EXPECT_EQ(to_json(r2), to_json(rep));
  ASSERT_EQ(r2.points.size(), rep.points.size());
  for (std::size_t i = 0; i < rep.points.size(); ++i) {
    EXPECT_EQ(r2.points[i].p, rep.points[i].p);
    EXPECT_EQ(r2.points[i].log_se, rep.points[i].log_se);
    EXPECT_EQ(r2.points[i].agrees, rep.points[i].agrees);
  }
  ASSERT_TRUE(r2.fit.has_value());
  EXPECT_EQ(r2.fit->slope, rep.fit->slope);
  EXPECT_EQ(r2.verdict, rep.verdict);
  const Provenance p2 = provenance_from(back);
  EXPECT_EQ(p2.seed, p.seed);
  EXPECT_EQ(p2.config, p.config);
  EXPECT_EQ(p2.wall_clock, p.wall_clock);
  EXPECT_EQ(back.at("schema_version"), kSchemaVersion);
}

TEST(Report, NonFiniteValuesSurvive) {
  DeviationReport r;
  r.bound_upper = -kInf;
  r.bound_lower = NAN;
  const DeviationReport b = deviation_report_from(json::parse(to_json(r).dump()));
  EXPECT_EQ(b.bound_upper, -kInf);
  EXPECT_TRUE(std::isnan(b.bound_lower));
}

#ifdef ZIPFLOW_CLI

namespace {

int run_cli(const std::string& args, std::string* out = nullptr, const std::string& env = "") {
  const std::string path = ::testing::TempDir() + "zipflow_cli_out.txt";
  const std::string cmd = env + " " + ZIPFLOW_CLI + " " + args + " > " + path + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (out) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    *out = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, SuccessEmbedsProvenance) {
  std::string out;
  ASSERT_EQ(run_cli("rate-bound --set model.alphabet=2 --set 'potential.bernoulli=1 1' --set 'observable.table=1 -1' "
                    "--set rate.eps=0.5",
                    &out),
            0);
  const json j = json::parse(out);
  EXPECT_EQ(j.at("version"), kVersion);
  EXPECT_TRUE(j.contains("wall_clock"));
  EXPECT_EQ(j.at("config").at("rate").at("eps"), "0.5");
  EXPECT_NEAR(j.at("results").at(0).at("value").get<double>(), -0.130812, 1e-6);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("pressure --set model.alphabet=2 --set potential.colour=1"), 2);
  EXPECT_EQ(run_cli("pressure --set model.alphabet=2 --set 'potential.table=1 2 3'"), 2);
  EXPECT_EQ(run_cli("ld-shift -c " ZIPFLOW_SAMPLES "/ld_shift.cfg --set mc.seed=-1"), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("rauzy-class --set 'rauzy.permutation=4 3 2 1' --set rauzy.cap=2"), 4);
  EXPECT_EQ(run_cli("rauzy-class --set 'rauzy.permutation=2 1'"), 0);
}

TEST(Cli, WorkersFromEnvironment) {
  const std::string args = "ld-shift -c " ZIPFLOW_SAMPLES "/ld_shift.cfg --set mc.samples=1000 --set 'experiment.n_grid=10 20 30'";
  std::string out;
  ASSERT_EQ(run_cli(args, &out, "ZIPFLOW_WORKERS=2"), 0);
  EXPECT_EQ(json::parse(out).at("workers"), 2);
  EXPECT_EQ(run_cli(args, nullptr, "ZIPFLOW_WORKERS=zero"), 2);
  ASSERT_EQ(run_cli(args + " --workers 3", &out, "ZIPFLOW_WORKERS=2"), 0);
  EXPECT_EQ(json::parse(out).at("workers"), 3);
}

TEST(Cli, SamplesParse) {
  const std::vector<std::pair<std::string, std::string>> files{
      {"rauzy_321", "rauzy-class"}, {"orbit_m3", "zr-orbit"},   {"livsic_coboundary", "livsic"},
      {"pressure_markov", "pressure"}, {"rate_bernoulli", "rate-bound"}, {"ld_shift", "ld-shift"},
      {"ld_flow_two_roofs", "ld-flow"}, {"lap_dev", "lap-dev"},   {"teich_m2", "teich-demo"}};
  for (const auto& [file, command] : files) {
    Config c = Config::load(std::string(ZIPFLOW_SAMPLES) + "/" + file + ".cfg", cfg::schema_for(command));
    if (command == "ld-shift") {
      EXPECT_NO_THROW(cfg::shift_experiment(c));
    } else if (command == "ld-flow") {
      EXPECT_NO_THROW(cfg::flow_experiment(c));
    } else if (command == "lap-dev") {
      EXPECT_NO_THROW(cfg::lap_experiment(c));
    } else if (command == "teich-demo") {
      EXPECT_NO_THROW(cfg::teich(c));
    }
  }
  std::string out;
  EXPECT_EQ(run_cli("livsic -c " ZIPFLOW_SAMPLES "/livsic_coboundary.cfg", &out), 0);
  EXPECT_TRUE(json::parse(out).at("results").at("coboundary").get<bool>());
}

#endif
