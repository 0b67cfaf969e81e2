#pragma once

// Report serialization. JSON documents carry a versioned envelope with
// provenance; CSV tables carry the same provenance as leading '#' lines,
// then one header row, then one row per grid point.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "zipflow/core.hpp"
#include "zipflow/ldlab.hpp"
#include "zipflow/rauzy.hpp"
#include "zipflow/shift.hpp"
#include "zipflow/stats.hpp"
#include "zipflow/thermo.hpp"
#include "zipflow/zippered.hpp"

#ifndef ZIPFLOW_VERSION
#define ZIPFLOW_VERSION "0.0.0"
#endif

namespace zipflow {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = ZIPFLOW_VERSION;

namespace io {

/// Finite doubles as numbers; inf and nan as strings, which JSON lacks.
inline json num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

inline double to_num(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return NAN;
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw ValidationError("bad number '" + s + "' in report");
  }
  return j.get<double>();
}

inline json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline std::vector<double> to_nums(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(to_num(x));
  return v;
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace io

struct Provenance {
  std::string subcommand;
  std::string version = kVersion;
  std::string wall_clock = io::utc_now();
  double elapsed_seconds = 0.0;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::map<std::string, std::map<std::string, std::string>> config;
};

inline json envelope(const Provenance& p, json results) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "zipflow";
  j["version"] = p.version;
  j["subcommand"] = p.subcommand;
  j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
  j["workers"] = p.workers;
  j["wall_clock"] = p.wall_clock;
  j["elapsed_seconds"] = p.elapsed_seconds;
  j["config"] = p.config;
  j["results"] = std::move(results);
  return j;
}

inline Provenance provenance_from(const json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion)
    throw ValidationError("unsupported report schema");
  Provenance p;
  p.subcommand = j.at("subcommand").get<std::string>();
  p.version = j.at("version").get<std::string>();
  p.wall_clock = j.at("wall_clock").get<std::string>();
  p.elapsed_seconds = j.at("elapsed_seconds").get<double>();
  if (!j.at("seed").is_null()) p.seed = j.at("seed").get<std::uint64_t>();
  p.workers = j.at("workers").get<int>();
  p.config = j.at("config").get<std::map<std::string, std::map<std::string, std::string>>>();
  return p;
}

// ---------------------------------------------------------------------------
// Deviation reports

inline json to_json(const stats::SlopeFit& f) {
  return json{{"slope", io::num(f.slope)},           {"intercept", io::num(f.intercept)},
              {"half_width", io::num(f.half_width)}, {"se", io::num(f.se)},
              {"residual_sd", io::num(f.residual_sd)}, {"points", f.points},
              {"level", f.level}};
}

inline stats::SlopeFit slope_fit_from(const json& j) {
  stats::SlopeFit f{};
  f.slope = io::to_num(j.at("slope"));
  f.intercept = io::to_num(j.at("intercept"));
  f.half_width = io::to_num(j.at("half_width"));
  f.se = io::to_num(j.at("se"));
  f.residual_sd = io::to_num(j.at("residual_sd"));
  f.points = j.at("points").get<std::size_t>();
  f.level = j.at("level").get<double>();
  return f;
}

inline json to_json(const GridPoint& g) {
  return json{{"x", io::num(g.x)},
              {"method", g.method},
              {"p", io::num(g.p)},
              {"p_strict", io::num(g.p_strict)},
              {"ci_lo", io::num(g.ci_lo)},
              {"ci_hi", io::num(g.ci_hi)},
              {"log_p", io::num(g.log_p)},
              {"log_se", io::num(g.log_se)},
              {"hits", g.hits},
              {"hits_strict", g.hits_strict},
              {"samples", g.samples},
              {"ess", io::num(g.ess)},
              {"exact", io::num(g.exact)},
              {"exact_strict", io::num(g.exact_strict)},
              {"agrees", g.agrees ? json(*g.agrees) : json(nullptr)},
              {"used_in_fit", g.used_in_fit},
              {"flag", g.flag}};
}

inline GridPoint grid_point_from(const json& j) {
  GridPoint g;
  g.x = io::to_num(j.at("x"));
  g.method = j.at("method").get<std::string>();
  g.p = io::to_num(j.at("p"));
  g.p_strict = io::to_num(j.at("p_strict"));
  g.ci_lo = io::to_num(j.at("ci_lo"));
  g.ci_hi = io::to_num(j.at("ci_hi"));
  g.log_p = io::to_num(j.at("log_p"));
  g.log_se = io::to_num(j.at("log_se"));
  g.hits = j.at("hits").get<std::uint64_t>();
  g.hits_strict = j.at("hits_strict").get<std::uint64_t>();
  g.samples = j.at("samples").get<std::uint64_t>();
  g.ess = io::to_num(j.at("ess"));
  g.exact = io::to_num(j.at("exact"));
  g.exact_strict = io::to_num(j.at("exact_strict"));
  if (!j.at("agrees").is_null()) g.agrees = j.at("agrees").get<bool>();
  g.used_in_fit = j.at("used_in_fit").get<bool>();
  g.flag = j.at("flag").get<std::string>();
  return g;
}

inline json to_json(const DeviationReport& r) {
  json j;
  j["kind"] = r.kind;
  j["eps"] = io::num(r.eps);
  j["mean"] = io::num(r.mean);
  j["points"] = json::array();
  for (const auto& g : r.points) j["points"].push_back(to_json(g));
  j["fit"] = r.fit ? to_json(*r.fit) : json(nullptr);
  j["fit_corrected"] = r.fit_corrected ? to_json(*r.fit_corrected) : json(nullptr);
  j["bound_upper"] = io::num(r.bound_upper);
  j["bound_upper_literal"] = io::num(r.bound_upper_literal);
  j["bound_roof"] = io::num(r.bound_roof);
  j["bound_lower"] = io::num(r.bound_lower);
  j["terms"] = json::array();
  for (const auto& t : r.terms) j["terms"].push_back(json{{"name", t.name}, {"value", io::num(t.value)}, {"note", t.note}});
  j["verdict"] = r.verdict;
  j["sandwich"] = r.sandwich;
  j["negative_slope"] = r.negative_slope ? json(*r.negative_slope) : json(nullptr);
  j["notes"] = r.notes;
  return j;
}

inline DeviationReport deviation_report_from(const json& j) {
  DeviationReport r;
  r.kind = j.at("kind").get<std::string>();
  r.eps = io::to_num(j.at("eps"));
  r.mean = io::to_num(j.at("mean"));
  for (const auto& g : j.at("points")) r.points.push_back(grid_point_from(g));
  if (!j.at("fit").is_null()) r.fit = slope_fit_from(j.at("fit"));
  if (!j.at("fit_corrected").is_null()) r.fit_corrected = slope_fit_from(j.at("fit_corrected"));
  r.bound_upper = io::to_num(j.at("bound_upper"));
  r.bound_upper_literal = io::to_num(j.at("bound_upper_literal"));
  r.bound_roof = io::to_num(j.at("bound_roof"));
  r.bound_lower = io::to_num(j.at("bound_lower"));
  for (const auto& t : j.at("terms"))
    r.terms.push_back({t.at("name").get<std::string>(), io::to_num(t.at("value")), t.at("note").get<std::string>()});
  r.verdict = j.at("verdict").get<std::string>();
  r.sandwich = j.at("sandwich").get<std::string>();
  if (!j.at("negative_slope").is_null()) r.negative_slope = j.at("negative_slope").get<bool>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

// ---------------------------------------------------------------------------
// Other results

inline json to_json(const RauzyClass& c) {
  json j;
  j["members"] = json::array();
  for (const auto& p : c.members) j["members"].push_back(p.str());
  j["edges"] = json::array();
  for (const auto& e : c.edges) {
    json m = json::array();
    for (int i = 0; i < e.matrix.size(); ++i) {
      json row = json::array();
      for (int k = 0; k < e.matrix.size(); ++k) row.push_back(e.matrix(i, k));
      m.push_back(row);
    }
    j["edges"].push_back(json{{"source", c.members[e.source].str()},
                              {"label", std::string(1, to_char(e.label))},
                              {"target", c.members[e.target].str()},
                              {"matrix", m},
                              {"det", e.matrix.determinant()}});
  }
  return j;
}

inline json to_json(const LivsicVerdict& v) {
  json j{{"coboundary", v.coboundary},
         {"reached_period", v.reached_period},
         {"partial", v.partial},
         {"max_abs_sum", io::num(v.max_abs_sum)}};
  if (v.witness) {
    json z = json::array();
    for (auto s : v.witness->z) z.push_back(static_cast<int>(s));
    j["witness"] = json{{"word", z}, {"period", v.witness->period}, {"sum", io::num(v.witness->sum)}};
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

inline const char* to_string(RateStatus s) {
  return s == RateStatus::interior ? "interior" : s == RateStatus::boundary ? "boundary" : "outside";
}

inline json to_json(const DeviationBound& b) {
  return json{{"value", io::num(b.value)},           {"value_strict", io::num(b.value_strict)},
              {"mean", io::num(b.mean)},             {"rate_plus", io::num(b.rate_plus)},
              {"rate_minus", io::num(b.rate_minus)}, {"degenerate", b.degenerate},
              {"diagnostic", b.diagnostic}};
}

inline json to_json(const HolderFit& h) {
  return json{{"constant", io::num(h.constant)}, {"rate", io::num(h.rate)}, {"base", io::num(h.base)},
              {"residual", io::num(h.residual)}, {"exact", h.exact},      {"decaying", h.decaying},
              {"var", io::nums(h.var)}};
}

inline json to_json(const LapLaw& l) {
  return json{{"T", io::num(l.T)},
              {"rbar", io::num(l.rbar)},
              {"mean_ratio", io::num(l.mean_ratio)},
              {"mean_abs_dev", io::num(l.mean_abs_dev)},
              {"max_abs_dev", io::num(l.max_abs_dev)},
              {"samples", l.samples}};
}

inline json to_json(const TeichReport& t) {
  json winners = json::object();
  for (const auto& [k, v] : t.winners) winners[std::to_string(k)] = v;
  std::vector<double> lengths(t.lengths.begin(), t.lengths.end());
  return json{{"label", t.label},
              {"steps", t.steps},
              {"restarts", t.restarts},
              {"non_finite", t.non_finite},
              {"letters", t.letters},
              {"winners", winners},
              {"roof_min", io::num(t.roof_min)},
              {"roof_mean", io::num(t.roof_mean)},
              {"roof_max", io::num(t.roof_max)},
              {"roof_levels", io::nums(t.roof_levels)},
              {"roof_tail", t.roof_tail},
              {"roof_holder", to_json(t.roof_holder)},
              {"observable_mean", io::num(t.observable_mean)},
              {"lengths", t.lengths},
              {"deviation_mass", io::nums(t.deviation_mass)},
              {"blocks", t.blocks}};
}

// ---------------------------------------------------------------------------
// CSV

using Cell = std::variant<double, std::int64_t, std::uint64_t, std::string>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

namespace io {

inline std::string format(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string cell(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) return format(v);
        else if constexpr (std::is_same_v<T, std::string>) return quote(v);
        else return std::to_string(v);
      },
      c);
}

}  // namespace io

inline void write_csv(std::ostream& os, const Table& t, const Provenance* p = nullptr) {
  if (p) {
    os << "# zipflow " << p->version << " " << p->subcommand << "\n";
    os << "# wall_clock " << p->wall_clock << "\n";
    os << "# seed " << (p->seed ? std::to_string(*p->seed) : "none") << "\n";
    for (const auto& [s, keys] : p->config)
      for (const auto& [k, v] : keys) os << "# " << s << "." << k << " = " << v << "\n";
  }
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << "\n";
  for (const auto& row : t.rows) {
    require(row.size() == t.header.size(), "CSV row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << io::cell(row[i]);
    os << "\n";
  }
}

inline Table to_table(const DeviationReport& r) {
  Table t;
  t.header = {"x",    "method", "p",           "p_strict", "ci_lo", "ci_hi",  "log_p",       "log_se",
              "hits", "hits_strict", "samples", "ess",     "exact", "exact_strict", "agrees", "used_in_fit",
              "flag"};
  for (const auto& g : r.points)
    t.rows.push_back({g.x, g.method, g.p, g.p_strict, g.ci_lo, g.ci_hi, g.log_p, g.log_se, g.hits, g.hits_strict,
                      g.samples, g.ess, g.exact, g.exact_strict,
                      std::string(g.agrees ? (*g.agrees ? "yes" : "no") : ""),
                      std::string(g.used_in_fit ? "yes" : "no"), g.flag});
  return t;
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ResourceError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw ResourceError("write to '" + path + "' failed");
}

inline std::string csv_string(const Table& t, const Provenance* p = nullptr) {
  std::ostringstream os;
  write_csv(os, t, p);
  return os.str();
}

}  // namespace zipflow
