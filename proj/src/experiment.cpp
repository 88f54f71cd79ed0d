#include "cvqwc/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "cvqwc/bandwidth.hpp"
#include "cvqwc/channels.hpp"
#include "cvqwc/parallel.hpp"
#include "cvqwc/sources.hpp"
#include "cvqwc/teleport.hpp"

namespace cvqwc {

using nlohmann::json;

namespace {

constexpr double kMaxR = 2.5;

int line_at_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

int line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_at_offset(text, pos);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);  // no "-0"
  return buf;
}

std::string fmt(int v) { return std::to_string(v); }

// Typed access to one JSON object with unknown-key rejection.
class Reader {
 public:
  Reader(const json& obj, std::string where, const std::string& text, std::set<std::string> allowed)
      : obj_(obj), where_(std::move(where)), text_(text) {
    if (!obj.is_object()) fail(where_, where_ + " must be an object");
    for (const auto& [key, value] : obj.items()) {
      (void)value;
      if (!allowed.count(key)) fail(key, "unknown key \"" + key + "\" in " + where_);
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  const json& raw(const std::string& key) const { return obj_.at(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(msg, line_of_key(text_, key));
  }

  double number(const std::string& key, std::optional<double> def, double lo, double hi) const {
    if (!has(key)) {
      if (!def) fail(where_, "missing required key \"" + key + "\" in " + where_);
      return *def;
    }
    return check_number(key, obj_.at(key), lo, hi);
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def, double lo,
                              double hi) const {
    if (!has(key)) {
      if (!def) fail(where_, "missing required key \"" + key + "\" in " + where_);
      return *def;
    }
    const json& v = obj_.at(key);
    if (v.is_number()) return {check_number(key, v, lo, hi)};
    if (!v.is_array() || v.empty()) fail(key, "\"" + key + "\" must be a number or a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(check_number(key, e, lo, hi));
    return out;
  }

  int integer(const std::string& key, std::optional<int> def, int lo, int hi) const {
    if (!has(key)) {
      if (!def) fail(where_, "missing required key \"" + key + "\" in " + where_);
      return *def;
    }
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) fail(key, "\"" + key + "\" must be an integer");
    const auto x = v.get<long long>();
    if (x < lo || x > hi) {
      fail(key, "\"" + key + "\" = " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
    }
    return static_cast<int>(x);
  }

  std::string choice(const std::string& key, std::optional<std::string> def,
                     const std::vector<std::string>& options) const {
    if (!has(key)) {
      if (!def) fail(where_, "missing required key \"" + key + "\" in " + where_);
      return *def;
    }
    return check_choice(key, obj_.at(key), options);
  }

  std::vector<std::string> choices(const std::string& key, std::vector<std::string> def,
                                   const std::vector<std::string>& options) const {
    if (!has(key)) return def;
    const json& v = obj_.at(key);
    if (v.is_string()) return {check_choice(key, v, options)};
    if (!v.is_array() || v.empty()) fail(key, "\"" + key + "\" must be a string or a non-empty array");
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(check_choice(key, e, options));
    return out;
  }

 private:
  double check_number(const std::string& key, const json& v, double lo, double hi) const {
    if (!v.is_number()) fail(key, "\"" + key + "\" must be a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) {
      fail(key, "\"" + key + "\" = " + fmt(x) + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
    }
    return x;
  }

  std::string check_choice(const std::string& key, const json& v, const std::vector<std::string>& options) const {
    if (!v.is_string()) fail(key, "\"" + key + "\" must be a string");
    const auto s = v.get<std::string>();
    if (std::find(options.begin(), options.end(), s) == options.end()) {
      std::string list;
      for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
      fail(key, "\"" + key + "\" = \"" + s + "\" is not one of: " + list);
    }
    return s;
  }

  const json& obj_;
  std::string where_;
  const std::string& text_;
};

// ---- shared parameter pieces -------------------------------------------------------

struct GainSpec {
  GainRule rule;
  std::string label;  // unit | matched | fixed
};

GainSpec parse_gain(const Reader& rd, const std::string& key, const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "unit") return {GainRule::unit(), "unit"};
    if (s == "matched") return {GainRule::matched(), "matched"};
    rd.fail(key, "gain must be \"unit\", \"matched\" or a number");
  }
  if (v.is_number()) {
    const double g = v.get<double>();
    if (!(g >= 0.0 && g <= 2.0)) rd.fail(key, "fixed gain " + fmt(g) + " outside [0, 2]");
    return {GainRule::fixed(g), "fixed"};
  }
  rd.fail(key, "gain must be \"unit\", \"matched\" or a number");
}

GainSpec gain_param(const Reader& rd, const std::string& key, const std::string& def) {
  return rd.has(key) ? parse_gain(rd, key, rd.raw(key)) : parse_gain(rd, key, json(def));
}

std::vector<GainSpec> gains_param(const Reader& rd, const std::string& key) {
  if (!rd.has(key)) rd.fail(key, "missing required key \"" + key + "\"");
  const json& v = rd.raw(key);
  if (!v.is_array()) return {parse_gain(rd, key, v)};
  if (v.empty()) rd.fail(key, "\"" + key + "\" must not be empty");
  std::vector<GainSpec> out;
  for (const auto& e : v) out.push_back(parse_gain(rd, key, e));
  return out;
}

cplx parse_amplitude(const Reader& rd, const std::string& key, const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  rd.fail(key, "amplitude must be a number or [re, im]");
}

InputQubit input_param(const Reader& rd, const std::string& text, const std::string& def) {
  const double s = std::sqrt(0.5);
  const std::map<std::string, InputQubit> presets{
      {"H", {1.0, 0.0}},  {"V", {0.0, 1.0}},
      {"D", {s, s}},      {"A", {s, -s}},
      {"R", {s, cplx{0.0, s}}}, {"L", {s, cplx{0.0, -s}}}};
  if (!rd.has("input")) return presets.at(def);
  const json& v = rd.raw("input");
  if (v.is_string()) {
    const auto it = presets.find(v.get<std::string>());
    if (it == presets.end()) rd.fail("input", "input preset must be one of H, V, D, A, R, L");
    return it->second;
  }
  Reader in(v, "input", text, {"c1", "c2"});
  if (!in.has("c1") || !in.has("c2")) rd.fail("input", "input needs both c1 and c2");
  InputQubit q{parse_amplitude(in, "c1", v.at("c1")), parse_amplitude(in, "c2", v.at("c2"))};
  try {
    q.validate();
  } catch (const FockError& e) {
    rd.fail("input", e.what());
  }
  return q;
}

std::optional<BetaGrid> grid_param(const Reader& rd, const std::string& text) {
  if (!rd.has("grid")) return std::nullopt;
  const json& v = rd.raw("grid");
  if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
  Reader g(v, "grid", text, {"half_width", "points_per_axis"});
  BetaGrid grid;
  grid.half_width = g.number("half_width", std::nullopt, 0.5, 60.0);
  grid.points_per_axis = g.integer("points_per_axis", std::nullopt, 3, 401);
  return grid;
}

TeleportOptions options_param(const Reader& rd) {
  TeleportOptions o;
  o.source_cutoff = rd.integer("source_cutoff", 0, 0, 5000);
  o.output_cutoff = rd.integer("output_cutoff", 0, 0, 60);
  o.min_grid_mass = rd.number("min_grid_mass", 0.99, 0.0, 1.0);
  o.max_truncation_leakage = rd.number("max_truncation_leakage", 1e-6, 0.0, 1.0);
  return o;
}

SourceParams source_param(const Reader& rd, double r) {
  SourceParams p;
  p.r = r;
  p.s_coefficient = rd.number("s_coefficient", 1.0, -10.0, 10.0);
  p.phi_A = rd.number("phi_A", 0.0, -100.0, 100.0);
  p.phi_B = rd.number("phi_B", 0.0, -100.0, 100.0);
  return p;
}

const std::set<std::string> kTeleportKeys{"r",     "gain",          "input",         "grid",        "source_cutoff",
                                          "output_cutoff", "min_grid_mass", "max_truncation_leakage", "s_coefficient",
                                          "phi_A", "phi_B"};

std::set<std::string> with(std::set<std::string> base, std::initializer_list<std::string> extra) {
  base.insert(extra);
  return base;
}

// ---- rows -----------------------------------------------------------------------------

struct Row {
  std::vector<std::string> cells;
  json meta = json::object();
};

using Point = std::function<Row(std::size_t inner_threads)>;

const std::vector<std::string> kMetricColumns{
    "fidelity",      "conditional_fidelity", "vacuum_weight",      "one_photon_weight",
    "multi_photon_weight", "bloch_x",        "bloch_y",            "bloch_z",
    "captured_grid_mass",  "truncation_leakage", "source_cutoff",  "output_cutoff"};

void append_metrics(Row& row, const QubitMetrics& m, double mass, double leak, int ns, int nout) {
  for (double v : {m.fidelity.value_or(std::nan("")), m.conditional_fidelity.value_or(std::nan("")),
                   m.vacuum_weight, m.one_photon_weight, m.multi_photon_weight, m.bloch[0], m.bloch[1],
                   m.bloch[2], mass, leak}) {
    row.cells.push_back(fmt(v));
  }
  row.cells.push_back(fmt(ns));
  row.cells.push_back(fmt(nout));
  row.meta["source_cutoff"] = ns;
  row.meta["output_cutoff"] = nout;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

struct Plan {
  std::vector<std::string> header;
  std::vector<Point> points;
};

Plan plan_teleport_sweep(const ExperimentConfig& cfg, bool gain_sweep) {
  const auto& text = cfg.text;
  const Reader rd(cfg.parameters, "parameters", text,
                  gain_sweep ? with(kTeleportKeys, {"gains"}) : kTeleportKeys);
  if (gain_sweep && rd.has("gain")) rd.fail("gain", "gain_sweep takes \"gains\", not \"gain\"");
  const auto rs = rd.numbers("r", std::nullopt, 0.0, kMaxR);
  const auto gains = gain_sweep ? gains_param(rd, "gains") : std::vector<GainSpec>{gain_param(rd, "gain", "unit")};
  const InputQubit input = input_param(rd, text, "H");
  const auto grid = grid_param(rd, text);
  const TeleportOptions opts = options_param(rd);
  Plan plan;
  plan.header = concat({"r", "gain_rule", "gain"}, kMetricColumns);
  for (double r : rs) {
    const SourceParams params = source_param(rd, r);
    for (const auto& g : gains) {
      plan.points.push_back([=](std::size_t threads) {
        TeleportOptions o = opts;
        o.threads = threads;
        const auto res = teleport_average(input, params, g.rule, grid.value_or(BetaGrid::for_squeezing(r)), o);
        Row row;
        row.cells = {fmt(r), g.label, fmt(g.rule.resolve(r))};
        append_metrics(row, qubit_metrics(res.normalized(), input), res.grid_mass, res.truncation_leakage(),
                       res.source_cutoff, res.output_cutoff);
        return row;
      });
    }
  }
  return plan;
}

Plan plan_phase_error(const ExperimentConfig& cfg) {
  const auto& text = cfg.text;
  std::set<std::string> keys = kTeleportKeys;
  keys.erase("phi_A");
  keys.erase("phi_B");
  keys.insert("phi");
  const Reader rd(cfg.parameters, "parameters", text, keys);
  const auto rs = rd.numbers("r", std::nullopt, 0.0, kMaxR);
  const auto phis = rd.numbers("phi", std::nullopt, -100.0, 100.0);
  const GainSpec g = gain_param(rd, "gain", "matched");
  const InputQubit input = input_param(rd, text, "D");
  if (std::abs(input.c1) < 1e-6 || std::abs(input.c2) < 1e-6) {
    rd.fail("input", "phase_error needs an input with both polarizations populated");
  }
  const auto grid = grid_param(rd, text);
  const TeleportOptions opts = options_param(rd);
  Plan plan;
  plan.header = concat({"r", "phi", "gain_rule", "gain", "rotated_fidelity", "recovered_phase", "phase_deviation"},
                       kMetricColumns);
  for (double r : rs) {
    for (double phi : phis) {
      SourceParams params = source_param(rd, r);
      params.phi_A = phi;
      plan.points.push_back([=](std::size_t threads) {
        TeleportOptions o = opts;
        o.threads = threads;
        const auto res = teleport_average(input, params, g.rule, grid.value_or(BetaGrid::for_squeezing(r)), o);
        const DensityMatrix rho = res.normalized();
        const QubitMetrics m = qubit_metrics(rho, input);
        const InputQubit rotated{input.c1, input.c2 * std::polar(1.0, phi)};
        const double rotated_f = *qubit_metrics(rho, rotated).fidelity;
        const double recovered =
            wrap_angle(std::arg(m.one_photon_block(1, 0)) - std::arg(input.c2 * std::conj(input.c1)));
        Row row;
        row.cells = {fmt(r), fmt(phi), g.label, fmt(g.rule.resolve(r)), fmt(rotated_f), fmt(recovered),
                     fmt(wrap_angle(recovered - phi))};
        append_metrics(row, m, res.grid_mass, res.truncation_leakage(), res.source_cutoff, res.output_cutoff);
        return row;
      });
    }
  }
  return plan;
}

Plan plan_mc(const ExperimentConfig& cfg) {
  const auto& text = cfg.text;
  const Reader rd(cfg.parameters, "parameters", text, with(kTeleportKeys, {"shots"}));
  const auto rs = rd.numbers("r", std::nullopt, 0.0, kMaxR);
  const GainSpec g = gain_param(rd, "gain", "unit");
  const InputQubit input = input_param(rd, text, "H");
  const int shots = rd.integer("shots", 10000, 1, 10000000);
  const auto grid = grid_param(rd, text);
  const TeleportOptions opts = options_param(rd);
  const std::uint64_t seed = cfg.seed;
  Plan plan;
  plan.header = {"r", "gain_rule", "gain", "shots", "seed", "fidelity", "analytic_fidelity", "one_photon_weight",
                 "trace_distance", "frobenius_standard_error", "within_3se", "captured_grid_mass",
                 "truncation_leakage", "source_cutoff", "output_cutoff"};
  for (double r : rs) {
    const SourceParams params = source_param(rd, r);
    plan.points.push_back([=](std::size_t threads) {
      TeleportOptions o = opts;
      o.threads = threads;
      const BetaGrid gr = grid.value_or(BetaGrid::for_squeezing(r, 0.5));
      const auto avg = teleport_average(input, params, g.rule, gr, o);
      o.source_cutoff = avg.source_cutoff;
      o.output_cutoff = avg.output_cutoff;
      const auto mc = teleport_mc(input, params, g.rule, gr, shots, seed, o);
      const DensityMatrix ref = avg.normalized();
      const double td = trace_distance(mc.rho.matrix, ref.matrix);
      const QubitMetrics m = qubit_metrics(mc.rho, input);
      Row row;
      row.cells = {fmt(r),
                   g.label,
                   fmt(g.rule.resolve(r)),
                   fmt(shots),
                   std::to_string(seed),
                   fmt(*m.fidelity),
                   fmt(*qubit_metrics(ref, input).fidelity),
                   fmt(m.one_photon_weight),
                   fmt(td),
                   fmt(mc.frobenius_standard_error),
                   td <= 3.0 * mc.frobenius_standard_error ? "1" : "0",
                   fmt(mc.grid_mass),
                   fmt(avg.truncation_leakage()),
                   fmt(mc.source_cutoff),
                   fmt(mc.output_cutoff)};
      row.meta["source_cutoff"] = mc.source_cutoff;
      row.meta["output_cutoff"] = mc.output_cutoff;
      return row;
    });
  }
  return plan;
}

Plan plan_fwm(const ExperimentConfig& cfg) {
  const Reader rd(cfg.parameters, "parameters", cfg.text, {"r", "s_coefficient", "cutoff", "phi_A", "phi_B"});
  const auto rs = rd.numbers("r", std::nullopt, 0.0, kMaxR);
  const auto ss = rd.numbers("s_coefficient", std::vector<double>{1.0}, -10.0, 10.0);
  const int cutoff = rd.integer("cutoff", 12, 1, 30);
  const double phi_a = rd.number("phi_A", 0.0, -100.0, 100.0);
  const double phi_b = rd.number("phi_B", 0.0, -100.0, 100.0);
  Plan plan;
  plan.header = {"r", "s_coefficient", "cutoff", "fidelity", "overlap", "one_photon_weight", "captured_grid_mass",
                 "truncation_leakage"};
  for (double r : rs) {
    for (double s : ss) {
      plan.points.push_back([=](std::size_t) {
        SourceParams p;
        p.r = r;
        p.s_coefficient = s;
        p.phi_A = phi_a;
        p.phi_B = phi_b;
        const FockState fwm = apply_waveplates(make_fwm_source(p, cutoff));
        const FockState tmsv = make_tmsv_pair(p, cutoff);
        const double overlap =
            std::abs(inner_product(tmsv, fwm)) / std::sqrt(tmsv.norm_squared() * fwm.norm_squared());
        // probability of exactly one photon on arm B
        double one = 0.0;
        const auto amps = fwm.amplitudes();
        const std::size_t d = fwm.local_dim();
        for (std::size_t i = 0; i < amps.size(); ++i) {
          if ((i / d) % d + i % d == 1) one += std::norm(amps[i]);
        }
        Row row;
        row.cells = {fmt(r), fmt(s), fmt(cutoff), fmt(overlap * overlap), fmt(overlap),
                     fmt(one / fwm.norm_squared()), fmt(1.0), fmt(fwm.leakage() + tmsv.leakage())};
        row.meta["cutoff"] = cutoff;
        return row;
      });
    }
  }
  return plan;
}

Plan plan_bandwidth(const ExperimentConfig& cfg) {
  const auto& text = cfg.text;
  const Reader rd(cfg.parameters, "parameters", text,
                  {"r0", "gamma", "shape", "sigma", "center_offset", "n_bins", "bin_width", "gain", "input", "grid",
                   "source_cutoff", "output_cutoff", "min_grid_mass", "max_truncation_leakage"});
  SqueezingSpectrum base;
  base.r0 = rd.number("r0", std::nullopt, 0.0, kMaxR);
  const std::string shape = rd.choice("shape", "lorentzian", {"lorentzian", "flat"});
  base.shape = shape == "flat" ? SpectrumShape::flat : SpectrumShape::lorentzian;
  const auto gammas = rd.numbers("gamma", std::vector<double>{1.0}, 1e-6, 1e12);
  QubitSpectrum q;
  q.sigma = rd.number("sigma", 1.0, 1e-6, 1e6);
  q.center_offset = rd.number("center_offset", 0.0, -1e6, 1e6);
  FrequencyMap map;
  map.n_bins = rd.integer("n_bins", 17, 1, 201);
  if (map.n_bins % 2 == 0) rd.fail("n_bins", "n_bins must be odd so the bins are symmetric");
  map.bin_width = rd.number("bin_width", 0.5, 1e-9, 1e6);
  const GainSpec g = gain_param(rd, "gain", "unit");
  const InputQubit input = input_param(rd, text, "H");
  const auto grid = grid_param(rd, text);
  const TeleportOptions opts = options_param(rd);
  Plan plan;
  plan.header = {"r0",        "gamma",   "shape",  "sigma",    "center_offset", "n_bins", "bin_width", "gain_rule",
                 "fidelity",  "one_photon_weight", "captured_spectral_weight", "captured_grid_mass",
                 "truncation_leakage"};
  for (double gamma : gammas) {
    plan.points.push_back([=](std::size_t threads) {
      SqueezingSpectrum s = base;
      s.gamma = gamma;
      TeleportOptions o = opts;
      o.threads = threads;
      const auto res = effective_fidelity(q, s, g.rule, input, grid.value_or(BetaGrid::for_squeezing(s.r0)), map, o);
      double mass = 1.0;
      double leak = 0.0;
      json bins = json::array();
      for (const auto& b : res.bins) {
        mass = std::min(mass, b.grid_mass);
        leak = std::max(leak, b.truncation_leakage);
        bins.push_back({{"bin", b.bin}, {"r", b.r}, {"weight", b.weight}, {"fidelity", b.fidelity}});
      }
      Row row;
      row.cells = {fmt(s.r0),     fmt(gamma),        shape,         fmt(q.sigma),
                   fmt(q.center_offset), fmt(map.n_bins), fmt(map.bin_width), g.label,
                   fmt(res.effective_fidelity), fmt(res.one_photon_weight), fmt(res.captured_weight),
                   fmt(mass),     fmt(leak)};
      row.meta["bins"] = std::move(bins);
      return row;
    });
  }
  return plan;
}

StageSpec stage_param(const Reader& parent, const std::string& key, const std::string& text) {
  if (!parent.has(key)) parent.fail(key, "missing required key \"" + key + "\"");
  const Reader rd(parent.raw(key), key, text, {"r", "gain", "s_coefficient", "phi_A", "phi_B"});
  StageSpec s;
  s.source = source_param(rd, rd.number("r", std::nullopt, 0.0, kMaxR));
  s.gain = gain_param(rd, "gain", "unit").rule;
  return s;
}

std::string gain_label(const GainRule& g) {
  switch (g.kind) {
    case GainKind::unit: return "unit";
    case GainKind::matched: return "matched";
    case GainKind::fixed: return "fixed";
  }
  return "?";
}

Plan plan_network(const ExperimentConfig& cfg) {
  const auto& text = cfg.text;
  const Reader rd(cfg.parameters, "parameters", text,
                  {"kind", "eta", "stage1", "stage2", "input", "grid", "source_cutoff", "min_grid_mass",
                   "max_truncation_leakage"});
  const auto kinds = rd.choices("kind", {"fig1_chain", "predistributed"}, {"fig1_chain", "predistributed"});
  const auto etas = rd.numbers("eta", std::vector<double>{1.0}, 0.0, 1.0);
  const StageSpec s1 = stage_param(rd, "stage1", text);
  const StageSpec s2 = stage_param(rd, "stage2", text);
  const InputQubit input = input_param(rd, text, "D");
  const auto grid = grid_param(rd, text);
  TeleportOptions opts;
  opts.source_cutoff = rd.integer("source_cutoff", 0, 0, 5000);
  opts.min_grid_mass = rd.number("min_grid_mass", 0.99, 0.0, 1.0);
  opts.max_truncation_leakage = rd.number("max_truncation_leakage", 1e-6, 0.0, 1.0);
  Plan plan;
  plan.header = concat({"kind", "eta", "r1", "gain_rule1", "gain1", "r2", "gain_rule2", "gain2"}, kMetricColumns);
  for (const auto& kind : kinds) {
    for (double eta : etas) {
      plan.points.push_back([=](std::size_t threads) {
        PipelineSpec spec;
        spec.kind = kind == "fig1_chain" ? PipelineKind::fig1_chain : PipelineKind::predistributed;
        spec.stage1 = s1;
        spec.stage2 = s2;
        spec.fiber_eta = eta;
        spec.input = input;
        spec.grid = grid.value_or(BetaGrid::for_squeezing(std::max(s1.source.r, s2.source.r)));
        spec.options = opts;
        spec.options.threads = threads;
        const PipelineResult res = run_pipeline(spec);
        double mass = 1.0;
        double leak = 0.0;
        int ns = 0;
        for (const auto& st : res.stages) {
          mass = std::min(mass, st.grid_mass);
          leak += st.truncation_leakage;
          ns = std::max(ns, st.source_cutoff);
        }
        Row row;
        row.cells = {kind,
                     fmt(eta),
                     fmt(s1.source.r),
                     gain_label(s1.gain),
                     fmt(s1.gain.resolve(s1.source.r)),
                     fmt(s2.source.r),
                     gain_label(s2.gain),
                     fmt(s2.gain.resolve(s2.source.r))};
        append_metrics(row, res.metrics, mass, leak, ns, res.rho.cutoff);
        json stages = json::array();
        for (const auto& st : res.stages) {
          stages.push_back({{"stage", st.name}, {"grid_mass", st.grid_mass}, {"trace", st.trace},
                            {"truncation_leakage", st.truncation_leakage},
                            {"source_cutoff", st.source_cutoff}, {"output_cutoff", st.output_cutoff}});
        }
        row.meta["stages"] = std::move(stages);
        return row;
      });
    }
  }
  return plan;
}

Plan make_plan(const ExperimentConfig& cfg) {
  if (cfg.experiment == "fidelity_sweep") return plan_teleport_sweep(cfg, false);
  if (cfg.experiment == "gain_sweep") return plan_teleport_sweep(cfg, true);
  if (cfg.experiment == "phase_error") return plan_phase_error(cfg);
  if (cfg.experiment == "mc_vs_analytic") return plan_mc(cfg);
  if (cfg.experiment == "fwm_equivalence") return plan_fwm(cfg);
  if (cfg.experiment == "bandwidth") return plan_bandwidth(cfg);
  if (cfg.experiment == "network") return plan_network(cfg);
  throw ConfigError("unknown experiment \"" + cfg.experiment + "\"", line_of_key(cfg.text, "experiment"));
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(),
                      line_at_offset(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  const Reader rd(doc, "config", text,
                  {"experiment", "output_path", "parameters", "seed", "threads", "timing", "schema_version"});
  ExperimentConfig cfg;
  cfg.text = text;
  cfg.experiment = rd.choice("experiment", std::nullopt,
                             {"fidelity_sweep", "gain_sweep", "phase_error", "mc_vs_analytic", "fwm_equivalence",
                              "bandwidth", "network"});
  if (!rd.has("output_path") || !rd.raw("output_path").is_string() ||
      rd.raw("output_path").get<std::string>().empty()) {
    rd.fail("output_path", "\"output_path\" must be a non-empty string");
  }
  cfg.output_path = rd.raw("output_path").get<std::string>();
  if (rd.has("seed")) {
    const json& s = rd.raw("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      rd.fail("seed", "\"seed\" must be a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }
  cfg.threads = static_cast<std::size_t>(rd.integer("threads", 1, 1, 256));
  if (rd.has("timing")) {
    if (!rd.raw("timing").is_boolean()) rd.fail("timing", "\"timing\" must be true or false");
    cfg.timing = rd.raw("timing").get<bool>();
  }
  if (rd.has("schema_version")) {
    (void)rd.integer("schema_version", kSchemaVersion, kSchemaVersion, kSchemaVersion);
  }
  if (!rd.has("parameters")) rd.fail("config", "missing required key \"parameters\"");
  cfg.parameters = rd.raw("parameters");
  (void)make_plan(cfg);  // validates the parameters
  return cfg;
}

ResultTable run_experiment(const ExperimentConfig& cfg) {
  Plan plan = make_plan(cfg);
  const std::size_t n = plan.points.size();
  std::vector<Row> rows(n);
  std::vector<double> times(n);
  const bool outer = n >= cfg.threads;
  const std::size_t inner = outer ? 1 : cfg.threads;
  parallel_for(n, outer ? cfg.threads : 1, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    rows[i] = plan.points[i](inner);
    times[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  ResultTable table;
  table.header = plan.header;
  table.wall_times = times;
  for (auto& r : rows) {
    table.rows.push_back(std::move(r.cells));
    table.meta.push_back(std::move(r.meta));
  }
  return table;
}

std::string to_csv(const ResultTable& table, bool with_wall_time) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells, const std::string& extra) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    if (with_wall_time) os << "," << extra;
    os << "\n";
  };
  line(table.header, "wall_time");
  for (std::size_t i = 0; i < table.rows.size(); ++i) line(table.rows[i], fmt(table.wall_times[i]));
  return os.str();
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

int run_command(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                std::ostream& err) {
  ExperimentConfig cfg;
  try {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + config_path, 0);
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = parse_config(buf.str());
  } catch (const ConfigError& e) {
    err << "config error";
    if (e.line() > 0) err << " (" << config_path << ":" << e.line() << ")";
    err << ": " << e.what() << "\n";
    return 2;
  }
  if (overrides.threads) cfg.threads = std::max<std::size_t>(1, *overrides.threads);
  if (overrides.seed) cfg.seed = *overrides.seed;
  const std::filesystem::path dir = overrides.output_dir.value_or(cfg.output_path);

  ResultTable table;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    table = run_experiment(cfg);
  } catch (const NumericalGuardError& e) {
    err << "numerical guard failed [" << e.guard() << "]: " << e.what() << "\n";
    return 1;
  } catch (const FockError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::filesystem::create_directories(dir);
  const auto csv_path = dir / "results.csv";
  {
    std::ofstream f(csv_path, std::ios::binary);
    f << to_csv(table, cfg.timing);
  }
  json per_row = json::array();
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    json m = table.meta[i];
    m["wall_time"] = table.wall_times[i];
    per_row.push_back(std::move(m));
  }
  const json manifest{{"artifact_version", kArtifactVersion},
                      {"schema_version", kSchemaVersion},
                      {"experiment", cfg.experiment},
                      {"config_path", config_path},
                      {"config_sha256", sha256_hex(cfg.text)},
                      {"seed", cfg.seed},
                      {"threads", cfg.threads},
                      {"cutoff_rule", "source: smallest N with |q|^(N+1) < 1e-6 unless overridden"},
                      {"results", csv_path.filename().string()},
                      {"columns", table.header},
                      {"rows", per_row},
                      {"total_wall_time", total}};
  {
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    f << manifest.dump(2) << "\n";
  }
  out << "wrote " << table.rows.size() << " rows to " << csv_path.string() << "\n";
  return 0;
}

}  // namespace cvqwc
