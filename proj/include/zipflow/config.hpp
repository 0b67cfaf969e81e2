#pragma once

// Structured-text experiment files.
//
//   # comment
//   [section]
//   key = value            scalars, or whitespace-separated lists
//   piece = 01 : 0 inf : 1 -0.5
//
// Keys may repeat only where the schema says so (fiber pieces). Unknown
// sections and keys are rejected with their line and column. Overrides
// given as section.key=value replace whatever the file says.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/ldlab.hpp"
#include "zipflow/rauzy.hpp"
#include "zipflow/shift.hpp"
#include "zipflow/suspension.hpp"
#include "zipflow/thermo.hpp"

namespace zipflow {

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& msg, int line, int col)
      : ValidationError("line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + msg),
        line_(line), col_(col) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return col_; }

 private:
  int line_, col_;
};

struct ConfigValue {
  std::string text;
  int line = 0;  // 0 for overrides
  int col = 0;
};

struct KeySpec {
  std::string name;
  bool repeated = false;
};

/// Allowed sections and keys.
using Schema = std::map<std::string, std::vector<KeySpec>>;

class Config {
 public:
  using Section = std::map<std::string, std::vector<ConfigValue>>;

  static Config parse(std::istream& in, const Schema& schema) {
    Config c;
    c.schema_ = schema;
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string s = raw;
      if (auto h = s.find('#'); h != std::string::npos) s.erase(h);
      const auto first = s.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const int col = static_cast<int>(first) + 1;
      const auto last = s.find_last_not_of(" \t\r");
      s = s.substr(first, last - first + 1);
      if (s.front() == '[') {
        if (s.back() != ']') throw ParseError("unterminated section header", line, col);
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ParseError("empty section name", line, col);
        if (!schema.count(section)) throw ParseError("unknown section [" + section + "]", line, col + 1);
        c.data_[section];
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError("expected key = value", line, col);
      if (section.empty()) throw ParseError("key outside of any section", line, col);
      const std::string key = trim(s.substr(0, eq));
      const std::string value = trim(s.substr(eq + 1));
      if (key.empty()) throw ParseError("missing key before '='", line, col);
      const KeySpec* spec = find_key(schema, section, key);
      if (!spec) throw ParseError("unknown key '" + key + "' in [" + section + "]", line, col);
      auto& slot = c.data_[section][key];
      if (!slot.empty() && !spec->repeated) throw ParseError("duplicate key '" + key + "' in [" + section + "]", line, col);
      const auto vcol = static_cast<int>(first + s.find_first_not_of(" \t", eq + 1)) + 1;
      slot.push_back({value, line, vcol});
    }
    return c;
  }

  static Config parse_string(const std::string& text, const Schema& schema) {
    std::istringstream in(text);
    return parse(in, schema);
  }

  static Config load(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    return parse(in, schema);
  }

  /// section.key=value. Repeated keys accumulate; others are replaced.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ValidationError("override '" + assignment + "' must look like section.key=value");
    const std::string section = trim(assignment.substr(0, dot));
    const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
    if (!schema_.count(section)) throw ValidationError("override names unknown section [" + section + "]");
    const KeySpec* spec = find_key(schema_, section, key);
    if (!spec) throw ValidationError("override names unknown key '" + key + "' in [" + section + "]");
    auto& slot = data_[section][key];
    if (!spec->repeated) slot.clear();
    slot.push_back({trim(assignment.substr(eq + 1)), 0, 0});
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) && !s->second.at(key).empty();
  }
  bool has_section(const std::string& section) const { return data_.count(section) > 0; }

  const ConfigValue& raw(const std::string& section, const std::string& key) const {
    if (!has(section, key)) throw ValidationError("missing required key '" + key + "' in [" + section + "]");
    return data_.at(section).at(key).back();
  }
  std::vector<ConfigValue> all(const std::string& section, const std::string& key) const {
    if (!has(section, key)) return {};
    return data_.at(section).at(key);
  }

  std::string str(const std::string& section, const std::string& key) const { return raw(section, key).text; }
  std::string str(const std::string& section, const std::string& key, const std::string& def) {
    return get_or(section, key, def, [&] { return str(section, key); });
  }

  double real(const std::string& section, const std::string& key) const {
    return parse_real(raw(section, key), section, key);
  }
  double real(const std::string& section, const std::string& key, double def) {
    return get_or(section, key, def, [&] { return real(section, key); });
  }

  std::int64_t integer(const std::string& section, const std::string& key) const {
    return parse_int(raw(section, key), section, key);
  }
  std::int64_t integer(const std::string& section, const std::string& key, std::int64_t def) {
    return get_or(section, key, def, [&] { return integer(section, key); });
  }

  std::uint64_t unsigned_integer(const std::string& section, const std::string& key) const {
    const ConfigValue& v = raw(section, key);
    errno = 0;
    char* end = nullptr;
    const std::string t = v.text;
    if (t.empty() || t[0] == '-') fail(v, section, key, "expected a nonnegative integer");
    const unsigned long long x = std::strtoull(t.c_str(), &end, 10);
    if (errno || *end) fail(v, section, key, "expected a nonnegative integer");
    return x;
  }

  std::vector<double> reals(const std::string& section, const std::string& key) const {
    const ConfigValue& v = raw(section, key);
    std::vector<double> out;
    for (const auto& tok : split(v.text)) out.push_back(parse_real({tok, v.line, v.col}, section, key));
    return out;
  }
  std::vector<double> reals(const std::string& section, const std::string& key, std::vector<double> def) {
    return get_or(section, key, def, [&] { return reals(section, key); });
  }
  std::vector<std::int64_t> integers(const std::string& section, const std::string& key) const {
    const ConfigValue& v = raw(section, key);
    std::vector<std::int64_t> out;
    for (const auto& tok : split(v.text)) out.push_back(parse_int({tok, v.line, v.col}, section, key));
    return out;
  }

  /// Every key that was read, with the value used (defaults included).
  const std::map<std::string, std::map<std::string, std::string>>& echo() const { return echo_; }
  void record(const std::string& section, const std::string& key, const std::string& value) {
    echo_[section][key] = value;
  }

  /// Keys present in the file but never read by the builder.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [s, keys] : data_)
      for (const auto& [k, v] : keys)
        if (!echo_.count(s) || !echo_.at(s).count(k)) out.push_back(s + "." + k);
    return out;
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  [[noreturn]] static void fail(const ConfigValue& v, const std::string& section, const std::string& key,
                                const std::string& what) {
    const std::string msg = "[" + section + "] " + key + " = '" + v.text + "': " + what;
    if (v.line > 0) throw ParseError(msg, v.line, v.col);
    throw ValidationError("override " + msg);
  }

 private:
  static const KeySpec* find_key(const Schema& schema, const std::string& section, const std::string& key) {
    const auto& keys = schema.at(section);
    for (const auto& k : keys)
      if (k.name == key) return &k;
    return nullptr;
  }

  template <class T, class Get>
  T get_or(const std::string& section, const std::string& key, T def, Get&& get) {
    T v = has(section, key) ? get() : def;
    std::ostringstream os;
    os.precision(17);
    if constexpr (std::is_same_v<T, std::vector<double>>) {
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    } else {
      os << v;
    }
    record(section, key, os.str());
    return v;
  }

  static double parse_real(const ConfigValue& v, const std::string& section, const std::string& key) {
    const std::string& t = v.text;
    if (t == "inf" || t == "+inf") return kInf;
    if (t == "-inf") return -kInf;
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(t.c_str(), &end);
    if (t.empty() || errno || *end || !std::isfinite(x)) fail(v, section, key, "expected a real number");
    return x;
  }
  static std::int64_t parse_int(const ConfigValue& v, const std::string& section, const std::string& key) {
    errno = 0;
    char* end = nullptr;
    const long long x = std::strtoll(v.text.c_str(), &end, 10);
    if (v.text.empty() || errno || *end) fail(v, section, key, "expected an integer");
    return x;
  }

  Schema schema_;
  std::map<std::string, Section> data_;
  std::map<std::string, std::map<std::string, std::string>> echo_;
};

// ---------------------------------------------------------------------------
// Schemas and builders

namespace cfg {

inline const std::vector<KeySpec> kTableKeys{{"depth"}, {"table"}, {"bernoulli"}, {"constant"}};
inline const std::vector<KeySpec> kMcKeys{{"samples"}, {"seed"}, {"workers"}, {"block"}, {"sampler"}, {"level"}, {"min_hits"}};

inline Schema schema_for(const std::string& command) {
  const Schema all{
      {"model", {{"alphabet"}}},
      {"potential", kTableKeys},
      {"observable", kTableKeys},
      {"roof", {{"depth"}, {"table"}, {"constant"}, {"r0"}}},
      {"flow_observable", {{"depth"}, {"piece", true}, {"fiber_constant"}}},
      {"experiment", {{"eps"}, {"zeta"}, {"n_grid"}, {"T_grid"}, {"mode"}, {"min_ess"}, {"exact_budget"}}},
      {"bounds", {{"xi"}, {"a"}, {"zeta"}, {"lap_xi"}, {"eps0_fallback"}}},
      {"mc", kMcKeys},
      {"rauzy", {{"permutation"}, {"cap"}}},
      {"orbit", {{"permutation"}, {"lambda"}, {"delta"}, {"steps"}, {"seed"}}},
      {"livsic", {{"p_max"}, {"tol"}}},
      {"pressure", {{"t_grid"}}},
      {"rate", {{"eps"}}},
      {"teich", {{"permutation"}, {"steps"}, {"starts"}, {"observable"}, {"eps"}, {"lengths"}, {"roof_levels"},
                 {"holder_depth"}, {"holder_points"}, {"seed"}, {"workers"}}},
  };
  const std::map<std::string, std::vector<std::string>> use{
      {"rauzy-class", {"rauzy"}},
      {"zr-orbit", {"orbit"}},
      {"livsic", {"model", "observable", "livsic"}},
      {"pressure", {"model", "potential", "observable", "pressure"}},
      {"rate-bound", {"model", "potential", "observable", "rate"}},
      {"ld-shift", {"model", "potential", "observable", "experiment", "mc"}},
      {"ld-flow", {"model", "potential", "roof", "flow_observable", "experiment", "bounds", "mc"}},
      {"lap-dev", {"model", "potential", "roof", "experiment", "bounds", "mc"}},
      {"teich-demo", {"teich"}},
  };
  auto it = use.find(command);
  if (it == use.end()) throw ValidationError("unknown subcommand '" + command + "'");
  Schema s;
  for (const auto& name : it->second) s[name] = all.at(name);
  return s;
}

inline std::vector<std::string> commands() {
  return {"rauzy-class", "zr-orbit", "livsic", "pressure", "rate-bound", "ld-shift", "ld-flow", "lap-dev", "teich-demo"};
}

inline int alphabet(Config& c) {
  const auto L = c.integer("model", "alphabet");
  require(L >= 2 && L <= 64, "[model] alphabet must lie in [2, 64]");
  c.record("model", "alphabet", std::to_string(L));
  return static_cast<int>(L);
}

/// A locally constant function: `table` with `depth`, `bernoulli` weights
/// (log p_a, depth 1), or a `constant`.
inline Observable table_observable(Config& c, const std::string& section, int L) {
  const bool t = c.has(section, "table"), b = c.has(section, "bernoulli"), k = c.has(section, "constant");
  require(t + b + k == 1, "[" + section + "] needs exactly one of table, bernoulli, constant");
  if (k) {
    const double v = c.real(section, "constant", 0.0);
    return Observable::constant(L, v);
  }
  if (b) {
    const auto w = c.reals(section, "bernoulli", {});
    require(static_cast<int>(w.size()) == L, "[" + section + "] bernoulli needs " + std::to_string(L) + " weights");
    double z = 0.0;
    for (double x : w) {
      require(x > 0.0, "[" + section + "] bernoulli weights must be positive");
      z += x;
    }
    std::vector<double> t(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) t[i] = std::log(w[i] / z);
    return Observable(L, 1, std::move(t));
  }
  const auto d = c.integer(section, "depth", 1);
  require(d >= 1 && d <= 24, "[" + section + "] depth must lie in [1, 24]");
  const auto values = c.reals(section, "table", {});
  const std::uint64_t want = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(d));
  if (values.size() != want)
    throw ValidationError("[" + section + "] table has " + std::to_string(values.size()) + " entries; alphabet " +
                          std::to_string(L) + " and depth " + std::to_string(d) + " need " + std::to_string(want));
  return Observable(L, static_cast<int>(d), values);
}

inline Roof roof(Config& c, int L) {
  Observable r = [&] {
    if (c.has("roof", "constant")) {
      require(!c.has("roof", "table"), "[roof] needs exactly one of table, constant");
      return Observable::constant(L, c.real("roof", "constant", 1.0));
    }
    const auto d = c.integer("roof", "depth", 1);
    require(d >= 1 && d <= 24, "[roof] depth must lie in [1, 24]");
    const auto values = c.reals("roof", "table", {});
    const std::uint64_t want = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(d));
    require(values.size() == want, "[roof] table needs " + std::to_string(want) + " entries");
    return Observable(L, static_cast<int>(d), values);
  }();
  const double r0 = c.real("roof", "r0", r.min());
  return Roof(std::move(r), r0);
}

/// `fiber_constant = v_0 .. v_{L-1}` or repeated
/// `piece = <word> : t0 t1 : c0 c1 ...` lines, one or more per pattern.
inline FlowObservable flow_observable(Config& c, int L) {
  if (c.has("flow_observable", "fiber_constant")) {
    require(!c.has("flow_observable", "piece"), "[flow_observable] needs either fiber_constant or pieces");
    const auto v = c.reals("flow_observable", "fiber_constant", {});
    require(static_cast<int>(v.size()) == L, "[flow_observable] fiber_constant needs " + std::to_string(L) + " values");
    return FlowObservable::fiber_constant(Observable(L, 1, v));
  }
  const auto d = c.integer("flow_observable", "depth", 1);
  require(d >= 1 && d <= 16, "[flow_observable] depth must lie in [1, 16]");
  const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(d));
  std::vector<std::vector<FiberPiece>> pieces(n);
  const auto lines = c.all("flow_observable", "piece");
  require(!lines.empty(), "[flow_observable] needs fiber_constant or at least one piece");
  std::string echo;
  for (const auto& v : lines) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : v.text) {
      if (ch == ':') {
        parts.push_back(Config::trim(cur));
        cur.clear();
      } else {
        cur += ch;
      }
    }
    parts.push_back(Config::trim(cur));
    if (parts.size() != 3) Config::fail(v, "flow_observable", "piece", "expected <word> : t0 t1 : coefficients");
    const std::string& word = parts[0];
    if (static_cast<std::int64_t>(word.size()) != d) Config::fail(v, "flow_observable", "piece", "pattern length must equal depth");
    Word w;
    for (char ch : word) {
      if (ch < '0' || ch - '0' >= L) Config::fail(v, "flow_observable", "piece", "pattern symbols must be digits below the alphabet size");
      w.push_back(static_cast<Symbol>(ch - '0'));
    }
    auto num = [&](const std::string& tok) {
      if (tok == "inf") return kInf;
      char* end = nullptr;
      const double x = std::strtod(tok.c_str(), &end);
      if (tok.empty() || *end || !std::isfinite(x)) Config::fail(v, "flow_observable", "piece", "bad number '" + tok + "'");
      return x;
    };
    const auto range = Config::split(parts[1]);
    if (range.size() != 2) Config::fail(v, "flow_observable", "piece", "expected two interval endpoints t0 t1");
    FiberPiece p{num(range[0]), num(range[1]), {}};
    for (const auto& tok : Config::split(parts[2])) p.coeffs.push_back(num(tok));
    if (p.coeffs.empty()) Config::fail(v, "flow_observable", "piece", "missing coefficients");
    if (!(p.t0 >= 0.0 && p.t1 > p.t0)) Config::fail(v, "flow_observable", "piece", "need 0 <= t0 < t1");
    pieces[word_to_index(w, L)].push_back(std::move(p));
    echo += (echo.empty() ? "" : " | ") + v.text;
  }
  c.record("flow_observable", "piece", echo);
  c.record("flow_observable", "depth", std::to_string(d));
  return FlowObservable(L, static_cast<int>(d), std::move(pieces));
}

inline McSettings mc(Config& c) {
  McSettings m;
  m.samples = static_cast<std::uint64_t>(c.integer("mc", "samples", static_cast<std::int64_t>(m.samples)));
  require(c.has("mc", "seed"), "[mc] seed is required for Monte Carlo subcommands");
  m.seed = c.unsigned_integer("mc", "seed");
  c.record("mc", "seed", std::to_string(m.seed));
  m.workers = static_cast<int>(c.integer("mc", "workers", 0));
  m.block = static_cast<std::size_t>(c.integer("mc", "block", static_cast<std::int64_t>(m.block)));
  const std::string s = c.str("mc", "sampler", "importance");
  require(s == "importance" || s == "plain", "[mc] sampler must be importance or plain");
  m.sampler = s == "plain" ? SamplerKind::plain : SamplerKind::importance;
  m.level = c.real("mc", "level", m.level);
  m.min_hits = static_cast<std::uint64_t>(c.integer("mc", "min_hits", static_cast<std::int64_t>(m.min_hits)));
  require(m.workers >= 0, "[mc] workers must be nonnegative");
  require(m.block >= 1, "[mc] block must be positive");
  require(m.level > 0.0 && m.level < 1.0, "[mc] level must lie in (0, 1)");
  return m;
}

inline std::vector<std::size_t> size_grid(Config& c, const std::string& section, const std::string& key) {
  const auto v = c.integers(section, key);
  std::vector<std::size_t> out;
  std::string echo;
  for (auto x : v) {
    require(x >= 1, "[" + section + "] " + key + " entries must be positive");
    out.push_back(static_cast<std::size_t>(x));
    echo += (echo.empty() ? "" : " ") + std::to_string(x);
  }
  c.record(section, key, echo);
  return out;
}

inline ShiftExperiment shift_experiment(Config& c) {
  const int L = alphabet(c);
  ShiftExperiment e;
  e.psi = table_observable(c, "potential", L);
  e.phi = table_observable(c, "observable", L);
  e.eps = c.real("experiment", "eps", 0.5);
  e.n_grid = size_grid(c, "experiment", "n_grid");
  const std::string mode = c.str("experiment", "mode", "mc");
  require(mode == "exact" || mode == "mc" || mode == "both", "[experiment] mode must be exact, mc or both");
  e.mode = mode == "exact" ? EstimatorMode::exact : mode == "mc" ? EstimatorMode::mc : EstimatorMode::both;
  e.exact_budget_nats = c.real("experiment", "exact_budget", kEnumerationBudgetNats);
  if (e.mode == EstimatorMode::exact) {
    e.mc.seed = c.has("mc", "seed") ? c.unsigned_integer("mc", "seed") : 0;
  } else {
    e.mc = mc(c);
  }
  validate(e);
  return e;
}

inline FlowBoundParams bound_params(Config& c) {
  FlowBoundParams b;
  b.xi = c.real("bounds", "xi", b.xi);
  b.a = c.real("bounds", "a", b.a);
  if (c.has("bounds", "zeta")) b.zeta = c.real("bounds", "zeta", 0.0);
  b.lap_xi = c.real("bounds", "lap_xi", b.lap_xi);
  b.eps0_fallback = c.real("bounds", "eps0_fallback", b.eps0_fallback);
  return b;
}

inline FlowExperiment flow_experiment(Config& c) {
  const int L = alphabet(c);
  FlowExperiment e;
  e.psi = table_observable(c, "potential", L);
  e.r = roof(c, L);
  e.phi = flow_observable(c, L);
  e.eps = c.real("experiment", "eps", 0.5);
  e.T_grid = c.reals("experiment", "T_grid", {});
  require(!e.T_grid.empty(), "[experiment] T_grid is required");
  e.min_ess = c.real("experiment", "min_ess", e.min_ess);
  e.bounds = bound_params(c);
  e.mc = mc(c);
  validate(e);
  return e;
}

inline LapExperiment lap_experiment(Config& c) {
  const int L = alphabet(c);
  LapExperiment e;
  e.psi = table_observable(c, "potential", L);
  e.r = roof(c, L);
  e.zeta = c.real("experiment", "zeta", e.zeta);
  e.T_grid = c.reals("experiment", "T_grid", {});
  require(!e.T_grid.empty(), "[experiment] T_grid is required");
  const FlowBoundParams b = bound_params(c);
  e.lap_xi = b.lap_xi;
  e.eps0_fallback = b.eps0_fallback;
  e.mc = mc(c);
  return e;
}

inline TeichConfig teich(Config& c) {
  TeichConfig t;
  t.pi = Permutation::parse(c.str("teich", "permutation", "2 1"));
  t.steps = static_cast<std::size_t>(c.integer("teich", "steps", static_cast<std::int64_t>(t.steps)));
  t.starts = static_cast<std::size_t>(c.integer("teich", "starts", static_cast<std::int64_t>(t.starts)));
  t.observable = c.str("teich", "observable", t.observable);
  t.eps = c.real("teich", "eps", t.eps);
  if (c.has("teich", "lengths")) {
    t.lengths = size_grid(c, "teich", "lengths");
  } else {
    c.record("teich", "lengths", "1000 10000");
  }
  t.roof_levels = c.reals("teich", "roof_levels", t.roof_levels);
  t.holder_depth = static_cast<int>(c.integer("teich", "holder_depth", t.holder_depth));
  t.holder_points = static_cast<std::size_t>(c.integer("teich", "holder_points", static_cast<std::int64_t>(t.holder_points)));
  require(c.has("teich", "seed"), "[teich] seed is required");
  t.seed = c.unsigned_integer("teich", "seed");
  c.record("teich", "seed", std::to_string(t.seed));
  t.workers = static_cast<int>(c.integer("teich", "workers", 0));
  require(t.holder_depth >= 1 && t.holder_depth <= 64, "[teich] holder_depth must lie in [1, 64]");
  return t;
}

}  // namespace cfg

}  // namespace zipflow
