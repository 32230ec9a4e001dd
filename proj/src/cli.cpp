#include "xjunction/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "xjunction/dynamics.hpp"

namespace xjunction {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* take(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void number(const std::string& key, double& dst) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      dst = v->get<double>();
    }
  }
  void number(const std::string& key, std::optional<double>& dst) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        dst.reset();
        return;
      }
      if (!v->is_number()) fail(key, "a number or null");
      dst = v->get<double>();
    }
  }
  void integer(const std::string& key, int& dst) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      dst = v->get<int>();
    }
  }
  void text(const std::string& key, std::string& dst) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      dst = v->get<std::string>();
    }
  }
  void flag(const std::string& key, bool& dst) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      dst = v->get<bool>();
    }
  }
  template <std::size_t N>
  void numbers(const std::string& key, std::array<double, N>& dst) {
    if (const json* v = take(key)) {
      if (!v->is_array() || v->size() != N) fail(key, "an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) fail(key, "an array of numbers");
        dst[i] = (*v)[i].get<double>();
      }
    }
  }
  void vec3(const std::string& key, Vec3& dst) {
    std::array<double, 3> a{dst.x(), dst.y(), dst.z()};
    numbers(key, a);
    dst = Vec3(a[0], a[1], a[2]);
  }
  void vec3(const std::string& key, std::optional<Vec3>& dst) {
    if (has(key) && j_.at(key).is_null()) {
      take(key);
      dst.reset();
      return;
    }
    if (!has(key)) return;
    Vec3 v = Vec3::Zero();
    vec3(key, v);
    dst = v;
  }

  Section sub(const std::string& key) {
    const json* v = take(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in " + where_);
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(where_ + "." + key + ": expected " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <class T>
json optional_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_same_v<T, Vec3>)
    return vec_json(*v);
  else
    return *v;
}

void one_of(const std::string& where, const std::string& value,
            std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (value == a) return;
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  throw ConfigError(where + ": '" + value + "' is not one of " + list);
}

JunctionParams parse_params(const json& j) {
  static const std::set<std::string> known = {"h",    "w_g",  "w_RF", "samples_per_spline",
                                              "d_in", "x_i2", "y_i2", "y_i3",
                                              "d_out", "x_o2", "y_o2", "y_o3", "arm_length"};
  if (!j.is_object()) throw ConfigError("geometry.params: expected an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in geometry.params");
  try {
    return JunctionParams::from_json(j);
  } catch (const GeometryError& e) {
    throw ConfigError(std::string("geometry.params: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    ctx.validate();
    optimizer.validate();
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const GeometryConfig& g = geometry;
  one_of("geometry.kind", g.kind, {"table4", "junction", "naive", "linear", "file"});
  one_of("geometry.arms", g.arms, {"extended", "final"});
  one_of("geometry.segmentation", g.segmentation, {"none", "reference", "linear"});
  if (!(g.h > 0.0)) throw ConfigError("geometry.h must be positive");
  if (g.kind == "junction" && !g.params) throw ConfigError("geometry.params required for kind junction");
  if (g.kind == "file" && g.layout_file.empty())
    throw ConfigError("geometry.layout_file required for kind file");
  if (g.arm_half_length < 0.0) throw ConfigError("geometry.arm_half_length must be non-negative");
  if (g.linear_segments < 0) throw ConfigError("geometry.linear_segments must be non-negative");

  one_of("analysis.strategy", analysis.strategy, {"min-pp", "fixed-height", "const-confinement"});
  if (!(analysis.range.step > 0.0)) throw ConfigError("analysis.range step must be positive");
  if (std::hypot(analysis.axis.x(), analysis.axis.y()) == 0.0)
    throw ConfigError("analysis.axis must have an in-plane component");
  if (!(analysis.height > 0.0)) throw ConfigError("analysis.height must be positive");
  if (!(analysis.target_laplacian > 0.0))
    throw ConfigError("analysis.target_laplacian must be positive");
  if (analysis.axial_mhz && !(*analysis.axial_mhz > 0.0))
    throw ConfigError("analysis.axial_mhz must be positive");

  const WaveformConfig& w = waveform;
  one_of("waveform.electrodes", w.electrodes, {"middle", "all"});
  one_of("waveform.mode", w.mode, {"transport", "static"});
  if (!(w.step > 0.0)) throw ConfigError("waveform.step must be positive");
  if (!(w.axial_mhz > 0.0)) throw ConfigError("waveform.axial_mhz must be positive");
  if (w.radial_floor < 0.0) throw ConfigError("waveform.radial_floor must be non-negative");
  if (!(w.v_min <= w.v_max)) throw ConfigError("waveform voltage bounds are inverted");
  for (double x : {w.weights.smoothness1, w.weights.smoothness2, w.weights.locality,
                   w.weights.residual, w.weights.ridge})
    if (!(x >= 0.0)) throw ConfigError("waveform weights must be non-negative");
  if (!(w.field_tolerance > 0.0) || !(w.axial_tolerance > 0.0))
    throw ConfigError("waveform tolerances must be positive");

  const SimulateConfig& s = simulate;
  for (double f : s.targets_mhz)
    if (!(f > 0.0)) throw ConfigError("simulate.targets_mhz must be positive");
  if (!(s.duration_us > 0.0)) throw ConfigError("simulate.duration_us must be positive");
  if (!(s.step_fraction > 0.0) || s.step_fraction > 1.0 / 50.0)
    throw ConfigError("simulate.step_fraction must lie in (0, 1/50]");
  if (s.decimation < 1) throw ConfigError("simulate.decimation must be at least 1");
  one_of("simulate.start", s.start, {"orbit", "rest"});
  if (!(s.emm_band[0] < s.emm_band[1])) throw ConfigError("simulate.emm_band is inverted");

  if (!(tilt.v_min <= tilt.v_max)) throw ConfigError("tilt voltage bounds are inverted");
  if (!(std::abs(tilt.angle_deg) < 90.0)) throw ConfigError("tilt.angle_deg must lie in (-90, 90)");
  if (tilt.degenerate_radial_mhz && !(*tilt.degenerate_radial_mhz > 0.0))
    throw ConfigError("tilt.degenerate_radial_mhz must be positive");

  if (output.empty()) throw ConfigError("output must not be empty");
  if (threads < 0) throw ConfigError("threads must be non-negative");
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section root(j, "config");

  {
    Section s = root.sub("ctx");
    std::string species = "ca40";
    s.text("species", species);
    one_of("ctx.species", species, {"ca40"});
    double f = c.ctx.rf_frequency_mhz();
    s.number("mass_kg", c.ctx.mass_kg);
    s.number("charge_c", c.ctx.charge_c);
    s.number("rf_peak_voltage", c.ctx.rf_peak_voltage);
    s.number("rf_frequency_mhz", f);
    c.ctx.rf_angular_frequency = 2.0 * std::numbers::pi * f * 1e6;
    s.finish();
  }
  {
    Section s = root.sub("geometry");
    GeometryConfig& g = c.geometry;
    s.text("kind", g.kind);
    s.number("h", g.h);
    if (const json* p = s.take("params"); p && !p->is_null()) g.params = parse_params(*p);
    s.text("arms", g.arms);
    s.number("arm_half_length", g.arm_half_length);
    s.text("segmentation", g.segmentation);
    s.integer("linear_segments", g.linear_segments);
    s.flag("split_outer", g.split_outer);
    s.text("layout_file", g.layout_file);
    s.finish();
  }
  {
    Section s = root.sub("optimizer");
    OptimizerConfig& o = c.optimizer;
    s.integer("points", o.points);
    s.number("x_max", o.x_max);
    s.integer("seeds", o.seeds);
    s.number("lower", o.lower);
    s.number("upper", o.upper);
    s.integer("max_start_attempts", o.max_start_attempts);
    Section w = s.sub("weights");
    w.number("w1", c.weights.w1);
    w.number("w2", c.weights.w2);
    w.finish();
    Section nm = s.sub("nelder_mead");
    nm.number("reflection", o.nelder_mead.reflection);
    nm.number("expansion", o.nelder_mead.expansion);
    nm.number("contraction", o.nelder_mead.contraction);
    nm.number("shrink", o.nelder_mead.shrink);
    nm.number("cost_spread", o.nelder_mead.cost_spread);
    nm.integer("max_evaluations", o.nelder_mead.max_evaluations);
    nm.number("initial_step", o.nelder_mead.initial_step);
    nm.integer("restarts", o.nelder_mead.restarts);
    nm.finish();
    s.finish();
  }
  {
    Section s = root.sub("analysis");
    AnalysisConfig& a = c.analysis;
    s.text("strategy", a.strategy);
    std::array<double, 3> range{a.range.start, a.range.stop, a.range.step};
    s.numbers("range", range);
    a.range = {range[0], range[1], range[2]};
    s.vec3("origin", a.origin);
    s.vec3("axis", a.axis);
    s.number("height", a.height);
    s.number("target_laplacian", a.target_laplacian);
    s.number("axial_mhz", a.axial_mhz);
    s.finish();
  }
  {
    Section s = root.sub("waveform");
    WaveformConfig& w = c.waveform;
    s.vec3("start", w.start);
    s.vec3("stop", w.stop);
    s.number("step", w.step);
    s.text("electrodes", w.electrodes);
    s.text("mode", w.mode);
    s.number("axial_mhz", w.axial_mhz);
    s.number("radial_floor", w.radial_floor);
    s.number("v_min", w.v_min);
    s.number("v_max", w.v_max);
    Section ws = s.sub("weights");
    ws.number("smoothness1", w.weights.smoothness1);
    ws.number("smoothness2", w.weights.smoothness2);
    ws.number("locality", w.weights.locality);
    ws.number("residual", w.weights.residual);
    ws.number("ridge", w.weights.ridge);
    ws.finish();
    s.number("field_tolerance", w.field_tolerance);
    s.number("axial_tolerance", w.axial_tolerance);
    s.finish();
  }
  {
    Section s = root.sub("simulate");
    SimulateConfig& m = c.simulate;
    s.vec3("point", m.point);
    s.numbers("targets_mhz", m.targets_mhz);
    s.number("duration_us", m.duration_us);
    s.number("step_fraction", m.step_fraction);
    s.integer("decimation", m.decimation);
    s.text("start", m.start);
    s.numbers("emm_band", m.emm_band);
    s.finish();
  }
  {
    Section s = root.sub("tilt");
    TiltConfig& t = c.tilt;
    s.vec3("zone", t.zone);
    s.number("angle_deg", t.angle_deg);
    s.number("v_min", t.v_min);
    s.number("v_max", t.v_max);
    s.number("degenerate_radial_mhz", t.degenerate_radial_mhz);
    s.finish();
  }
  root.text("output", c.output);
  if (const json* seeds = root.take("seeds")) {
    if (!seeds->is_array()) throw ConfigError("config.seeds: expected an array of integers");
    for (const auto& v : *seeds) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("config.seeds: expected non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  root.integer("threads", c.threads);
  root.finish();
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  const GeometryConfig& g = c.geometry;
  const OptimizerConfig& o = c.optimizer;
  const AnalysisConfig& a = c.analysis;
  const WaveformConfig& w = c.waveform;
  const SimulateConfig& s = c.simulate;
  const TiltConfig& t = c.tilt;
  json j;
  j["ctx"] = {{"species", "ca40"},
              {"mass_kg", c.ctx.mass_kg},
              {"charge_c", c.ctx.charge_c},
              {"rf_peak_voltage", c.ctx.rf_peak_voltage},
              {"rf_frequency_mhz", c.ctx.rf_frequency_mhz()}};
  j["geometry"] = {{"kind", g.kind},
                   {"h", g.h},
                   {"params", g.params ? g.params->to_json() : json(nullptr)},
                   {"arms", g.arms},
                   {"arm_half_length", g.arm_half_length},
                   {"segmentation", g.segmentation},
                   {"linear_segments", g.linear_segments},
                   {"split_outer", g.split_outer},
                   {"layout_file", g.layout_file}};
  j["optimizer"] = {{"points", o.points},
                    {"x_max", o.x_max},
                    {"seeds", o.seeds},
                    {"lower", o.lower},
                    {"upper", o.upper},
                    {"max_start_attempts", o.max_start_attempts},
                    {"weights", {{"w1", c.weights.w1}, {"w2", c.weights.w2}}},
                    {"nelder_mead",
                     {{"reflection", o.nelder_mead.reflection},
                      {"expansion", o.nelder_mead.expansion},
                      {"contraction", o.nelder_mead.contraction},
                      {"shrink", o.nelder_mead.shrink},
                      {"cost_spread", o.nelder_mead.cost_spread},
                      {"max_evaluations", o.nelder_mead.max_evaluations},
                      {"initial_step", o.nelder_mead.initial_step},
                      {"restarts", o.nelder_mead.restarts}}}};
  j["analysis"] = {{"strategy", a.strategy},
                   {"range", {a.range.start, a.range.stop, a.range.step}},
                   {"origin", vec_json(a.origin)},
                   {"axis", vec_json(a.axis)},
                   {"height", a.height},
                   {"target_laplacian", a.target_laplacian},
                   {"axial_mhz", optional_json(a.axial_mhz)}};
  j["waveform"] = {{"start", vec_json(w.start)},
                   {"stop", vec_json(w.stop)},
                   {"step", w.step},
                   {"electrodes", w.electrodes},
                   {"mode", w.mode},
                   {"axial_mhz", w.axial_mhz},
                   {"radial_floor", w.radial_floor},
                   {"v_min", w.v_min},
                   {"v_max", w.v_max},
                   {"weights",
                    {{"smoothness1", w.weights.smoothness1},
                     {"smoothness2", w.weights.smoothness2},
                     {"locality", w.weights.locality},
                     {"residual", w.weights.residual},
                     {"ridge", w.weights.ridge}}},
                   {"field_tolerance", w.field_tolerance},
                   {"axial_tolerance", w.axial_tolerance}};
  j["simulate"] = {{"point", optional_json(s.point)},
                   {"targets_mhz", s.targets_mhz},
                   {"duration_us", s.duration_us},
                   {"step_fraction", s.step_fraction},
                   {"decimation", s.decimation},
                   {"start", s.start},
                   {"emm_band", s.emm_band}};
  j["tilt"] = {{"zone", optional_json(t.zone)},
               {"angle_deg", t.angle_deg},
               {"v_min", t.v_min},
               {"v_max", t.v_max},
               {"degenerate_radial_mhz", optional_json(t.degenerate_radial_mhz)}};
  j["output"] = c.output;
  j["seeds"] = c.seeds;
  j["threads"] = c.threads;
  return j;
}

ElectrodeLayout build_layout(const GeometryConfig& g) {
  ElectrodeLayout layout;
  const double half = g.arm_half_length > 0.0 ? g.arm_half_length : 1.0e4 * g.h;
  if (g.kind == "file") {
    std::ifstream in(g.layout_file);
    if (!in) throw ConfigError("cannot read layout file " + g.layout_file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("layout file " + g.layout_file + ": " + e.what());
    }
    layout = layout_from_json(j);
  } else if (g.kind == "naive") {
    layout = build_naive_junction(g.h, half);
  } else if (g.kind == "linear") {
    layout = build_linear_fivewire(g.h, half);
  } else {
    JunctionParams p = g.kind == "junction" ? *g.params : JunctionParams::reference(g.h);
    if (g.arms == "final")
      p.with_final_arms();
    else
      p.with_extended_arms();
    layout = build_junction(p);
  }
  if (g.segmentation == "reference")
    layout = segment_controls(layout, SegmentationPlan::reference());
  else if (g.segmentation == "linear")
    layout = segment_controls(layout, SegmentationPlan::linear(g.linear_segments, g.split_outer));
  return layout;
}

namespace {

struct Run {
  RunConfig config;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

Path compute_path(const FieldModel& model, const RunConfig& c) {
  const AnalysisConfig& a = c.analysis;
  PathOptions opt;
  opt.origin = a.origin;
  opt.axis = Vec3(a.axis.x(), a.axis.y(), 0.0).normalized();
  opt.h = c.geometry.h;
  opt.with_modes = a.axial_mhz.has_value();
  opt.axial_frequency_mhz = a.axial_mhz;
  if (a.strategy == "min-pp") return path_min_pp(model, c.ctx, a.range, opt);
  if (a.strategy == "fixed-height") return path_fixed_height(model, c.ctx, a.height, a.range, opt);
  return path_const_confinement(model, c.ctx, a.target_laplacian, a.range, opt);
}

int cmd_optimize(Run& r) {
  OptimizerConfig oc = r.config.optimizer;
  oc.seed_list = r.config.seeds;
  oc.threads = r.config.threads;
  const OptimizationReport report = optimize(oc, r.config.weights, r.config.geometry.h);
  write_json(r.out_dir / "optimize_report.json", report.to_json());
  const SeedOutcome& best = report.seeds[report.best];
  const JunctionParams p = report.best_params();
  write_json(r.out_dir / "best_geometry.json", p.to_json());
  JunctionParams built = p;
  write_json(r.out_dir / "best_layout.json", layout_to_json(build_junction(built.with_final_arms())));

  r.out << "best seed " << best.seed << "  f1 " << best.cost.f1 << "  f2 " << best.cost.f2
        << "  cost " << best.cost.total << '\n';
  r.out << std::left << std::setw(10) << "variable" << std::right << std::setw(12) << "value (um)"
        << std::setw(12) << "value / h" << '\n';
  const auto v = p.normalized();
  r.out << std::fixed;
  for (std::size_t i = 0; i < v.size(); ++i)
    r.out << std::left << std::setw(10) << kJunctionVariableNames[i] << std::right
          << std::setprecision(2) << std::setw(12) << v[i] * p.h << std::setprecision(4)
          << std::setw(12) << v[i] << '\n';
  r.out.unsetf(std::ios::floatfield);
  return kExitOk;
}

int cmd_analyze(Run& r) {
  const ElectrodeLayout layout = build_layout(r.config.geometry);
  const FieldModel model(layout);
  const Path path = compute_path(model, r.config);
  {
    auto f = open_csv(r.out_dir / ("path_" + r.config.analysis.strategy + ".csv"));
    write_path_csv(f, path.samples);
  }
  json summary = {{"strategy", r.config.analysis.strategy},
                  {"samples", path.samples.size()},
                  {"complete", path.complete},
                  {"diagnostic", path.diagnostic},
                  {"jumps", path.jump_count()}};
  if (!path.samples.empty()) {
    double zmin = 1e300, zmax = -1e300;
    for (const auto& s : path.samples) {
      zmin = std::min(zmin, s.position.z());
      zmax = std::max(zmax, s.position.z());
    }
    const BarrierProfile b = barrier_profile(path.samples);
    json peaks = json::array(), nulls = json::array();
    for (const auto& e : b.peaks) peaks.push_back({{"s", e.s}, {"phi", e.phi}});
    for (const auto& e : b.minima) nulls.push_back({{"s", e.s}, {"phi", e.phi}});
    summary["min_laplacian"] = path.min_laplacian();
    summary["max_phi"] = path.max_phi();
    summary["max_phi_position"] = vec_json(path.at_max_phi().position);
    summary["min_height"] = zmin;
    summary["max_height"] = zmax;
    summary["peaks"] = peaks;
    summary["minima"] = nulls;
    r.out << "samples " << path.samples.size() << "  min laplacian " << path.min_laplacian()
          << " meV/um^2  max phi " << path.max_phi() << " meV  height " << zmin << ".." << zmax
          << " um\n";
  } else {
    r.out << "samples 0\n";
  }
  write_json(r.out_dir / "analysis_summary.json", summary);
  return path.complete ? kExitOk : kExitFailed;
}

int cmd_waveform(Run& r) {
  const WaveformConfig& w = r.config.waveform;
  const ElectrodeLayout layout = build_layout(r.config.geometry);
  const FieldModel model(layout);

  std::vector<Vec3> positions;
  const double length = (w.stop - w.start).norm();
  const auto n = static_cast<std::size_t>(std::llround(length / w.step)) + 1;
  for (std::size_t i = 0; i < n; ++i)
    positions.push_back(n == 1 ? w.start : Vec3(w.start + (w.stop - w.start) * (double(i) / (n - 1))));

  std::vector<std::string> subset;
  if (w.electrodes == "middle") {
    subset = middle_segments(layout);
    if (subset.empty())
      throw ConfigError("layout has no middle segments; use waveform.electrodes \"all\"");
  }
  const FieldTable table = build_field_table(model, layout, r.config.ctx, positions, subset);

  TransportRequest req;
  req.positions = positions;
  req.axes = default_axes(positions);
  req.axial_mhz = {w.axial_mhz};
  req.radial_floor = w.radial_floor;
  req.v_min = w.v_min;
  req.v_max = w.v_max;
  req.h = r.config.geometry.h;
  req.weights = w.weights;

  const bool single = w.mode == "static" || positions.size() == 1;
  const Waveform wf = single ? static_wells(req, table, r.config.ctx) : generate(req, table, r.config.ctx);
  const auto checked = verify(wf, model, r.config.ctx, req.axes, r.config.threads);

  {
    auto f = open_csv(r.out_dir / (single ? "static_wells.csv" : "waveform.csv"));
    write_waveform_csv(f, wf);
  }
  Waveform reported = wf;
  reported.diagnostics = checked;
  {
    auto f = open_csv(r.out_dir / "diagnostics.csv");
    write_diagnostics_csv(f, reported);
  }

  const double radial_min = std::sqrt(w.radial_floor) * w.axial_mhz;
  double max_field = 0.0, f_lo = 1e300, f_hi = -1e300, r_min = 1e300;
  bool pass = true;
  for (const auto& d : checked) {
    max_field = std::max(max_field, d.residual_field.norm());
    const auto& f = d.frequency_mhz;
    if (!d.stable || !f[0] || !f[1] || !f[2]) {
      pass = false;
      continue;
    }
    f_lo = std::min(f_lo, *f[0]);
    f_hi = std::max(f_hi, *f[0]);
    r_min = std::min(r_min, *f[2]);
    if (std::abs(*f[0] - w.axial_mhz) > w.axial_tolerance * w.axial_mhz) pass = false;
    if (*f[2] < radial_min * (1.0 - 1e-6)) pass = false;
  }
  if (max_field > w.field_tolerance) pass = false;

  write_json(r.out_dir / "waveform_summary.json",
             {{"steps", wf.steps.size()},
              {"mode", single ? "static" : "transport"},
              {"electrodes", wf.electrodes.size()},
              {"min_voltage", wf.min_voltage()},
              {"max_voltage", wf.max_voltage()},
              {"max_residual_field", max_field},
              {"axial_min_mhz", f_lo},
              {"axial_max_mhz", f_hi},
              {"radial_min_mhz", r_min},
              {"qp_status", to_string(wf.status)},
              {"pass", pass}});
  r.out << (single ? "static wells " : "waveform ") << wf.steps.size() << " steps  voltage "
        << wf.min_voltage() << ".." << wf.max_voltage() << " V  axial " << f_lo << ".." << f_hi
        << " MHz  min radial " << r_min << " MHz  " << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitOk : kExitFailed;
}

int cmd_simulate(Run& r) {
  const SimulateConfig& s = r.config.simulate;
  const PhysicalContext& ctx = r.config.ctx;
  const ElectrodeLayout layout = build_layout(r.config.geometry);
  const FieldModel model(layout);

  Vec3 point;
  if (s.point) {
    point = *s.point;
  } else {
    const Path path = compute_path(model, r.config);
    if (path.samples.empty()) throw std::runtime_error("analysis path is empty: " + path.diagnostic);
    point = path.at_max_phi().position;
  }
  const Compensation comp = compensate_and_confine(model, layout, ctx, point, s.targets_mhz);
  const LayoutSource source(model, ctx, comp.voltages);

  TrajectoryConfig tc;
  tc.position = s.start == "orbit" ? driven_orbit_start(source, ctx, point) : point;
  tc.duration_us = s.duration_us;
  tc.step_fraction = s.step_fraction;
  tc.decimation = s.decimation;
  tc.h = r.config.geometry.h;
  const Trajectory traj = integrate(source, ctx, tc);
  {
    auto f = open_csv(r.out_dir / "trajectory.csv");
    write_trajectory_csv(f, traj);
  }

  const EmmEstimate est = emm_estimate(model.pseudo(ctx, point), ctx);
  json summary = {{"point", vec_json(point)},
                  {"start", s.start},
                  {"escaped", traj.escaped},
                  {"escape_reason", traj.escape_reason},
                  {"estimate_um", est.amplitude_um},
                  {"max_abs_voltage", comp.max_abs_voltage}};
  json freqs = json::array();
  for (const auto& f : comp.frequency_mhz) freqs.push_back(f ? json(*f) : json(nullptr));
  summary["frequencies_mhz"] = freqs;
  json volts = json::object();
  for (const auto& [name, v] : comp.voltages) volts[name] = v;
  write_json(r.out_dir / "compensation.json", {{"point", vec_json(point)}, {"voltages", volts}});

  bool pass = !traj.escaped;
  if (pass) {
    const EmmComponent emm = extract_emm(traj, ctx.rf_angular_frequency * 1e-6);
    const double excess = emm.amplitude_um / est.amplitude_um - 1.0;
    pass = excess >= s.emm_band[0] && excess <= s.emm_band[1];
    summary["emm_um"] = emm.amplitude_um;
    summary["emm_excess"] = excess;
    summary["steady"] = emm.steady;
    summary["periods"] = emm.periods;
    r.out << "EMM " << emm.amplitude_um << " um  estimate " << est.amplitude_um << " um  excess "
          << 100.0 * excess << " %  max |V| " << comp.max_abs_voltage << " V  "
          << (pass ? "PASS" : "FAIL") << '\n';
  } else {
    r.out << "ion escaped: " << traj.escape_reason << '\n';
  }
  summary["pass"] = pass;
  write_json(r.out_dir / "simulate_summary.json", summary);
  return pass ? kExitOk : kExitFailed;
}

int cmd_export_geometry(Run& r) {
  const ElectrodeLayout layout = build_layout(r.config.geometry);
  write_json(r.out_dir / "layout.json", layout_to_json(layout));
  const GeometryConfig& g = r.config.geometry;
  if (g.kind == "table4" || g.kind == "junction") {
    const JunctionParams p = g.kind == "junction" ? *g.params : JunctionParams::reference(g.h);
    write_json(r.out_dir / "params.json", p.to_json());
  }
  for (const auto& e : layout.electrodes())
    r.out << e.name << ' ' << to_string(e.role) << ' ' << e.polygons.size() << '\n';
  return kExitOk;
}

int cmd_tilt(Run& r) {
  const TiltConfig& t = r.config.tilt;
  const ElectrodeLayout layout = build_layout(r.config.geometry);
  Vec3 zone;
  if (t.zone) {
    zone = *t.zone;
  } else {
    const FieldModel model(layout);
    PathOptions opt;
    opt.h = r.config.geometry.h;
    const Path p = path_min_pp(model, r.config.ctx, {0.0, 0.0, 1.0}, opt);
    if (p.samples.empty()) throw std::runtime_error("no pseudopotential minimum above the origin");
    zone = p.samples.front().position;
  }
  TiltOptions opt;
  opt.v_min = t.v_min;
  opt.v_max = t.v_max;
  opt.degenerate_radial_mhz = t.degenerate_radial_mhz;
  const TiltResult res = optimize_radial_tilt(layout, r.config.ctx, zone, t.angle_deg, opt);
  json volts = json::object();
  for (const auto& [name, v] : res.voltages) volts[name] = v;
  write_json(r.out_dir / "tilt.json", {{"zone", vec_json(zone)},
                                       {"angle_deg", t.angle_deg},
                                       {"splitting_mhz", res.splitting_mhz},
                                       {"f_high_mhz", res.f_high_mhz},
                                       {"f_low_mhz", res.f_low_mhz},
                                       {"angle_high_deg", res.angle_high_deg},
                                       {"angle_low_deg", res.angle_low_deg},
                                       {"rf_peak_voltage", res.ctx.rf_peak_voltage},
                                       {"bisection_steps", res.bisection_steps},
                                       {"voltages", volts}});
  r.out << "splitting " << 1e3 * res.splitting_mhz << " kHz  modes " << res.f_high_mhz << " / "
        << res.f_low_mhz << " MHz  axes " << res.angle_high_deg << " / " << res.angle_low_deg
        << " deg\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surface-electrode X-junction design, analysis and waveform tool", "xjunction"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::vector<std::uint64_t> seeds;
  int threads = -1;

  using Command = int (*)(Run&);
  const std::vector<std::pair<std::string, std::pair<std::string, Command>>> commands = {
      {"optimize", {"multi-start RF shape optimization", cmd_optimize}},
      {"analyze", {"pseudopotential along a transport path", cmd_analyze}},
      {"waveform", {"transport waveform or static wells", cmd_waveform}},
      {"simulate", {"ion trajectory and micromotion", cmd_simulate}},
      {"export-geometry", {"electrode layout as JSON", cmd_export_geometry}},
      {"tilt", {"radial mode tilt on a segmented linear trap", cmd_tilt}},
  };
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seeds", seeds, "comma-separated seed list")->delimiter(',');
    sub->add_option("--threads", threads, "worker thread cap (0: all cores)")
        ->check(CLI::NonNegativeNumber);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
    }
    RunConfig config = parse_run_config(j);
    if (!out_dir.empty()) config.output = out_dir;
    if (!seeds.empty()) config.seeds = seeds;
    if (threads >= 0) config.threads = threads;
    config.validate();

    Run run{config, fs::path(config.output), out, err};
    fs::create_directories(run.out_dir);
    write_json(run.out_dir / "effective_config.json", to_json(config));
    for (const auto& [name, entry] : commands)
      if (app.got_subcommand(name)) return entry.second(run);
    return kExitInvalid;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const GeometryError& e) {
    err << "geometry error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const WaveformInfeasible& e) {
    err << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  }
}

}  // namespace xjunction
