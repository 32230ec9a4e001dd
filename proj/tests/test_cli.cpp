#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xjunction/cli.hpp"

using namespace xjunction;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "xjunction_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("configuration schema") {
  const RunConfig d = parse_run_config(json::object());
  CHECK(d.geometry.kind == "table4");
  CHECK(d.ctx.rf_peak_voltage == 40.0);
  CHECK(d.ctx.rf_frequency_mhz() == doctest::Approx(40.0));
  CHECK(d.waveform.axial_mhz == 1.5);
  CHECK(d.simulate.targets_mhz[0] == 6.51);
  CHECK(d.seeds.empty());

  const json custom = {
      {"ctx", {{"rf_peak_voltage", 30.0}, {"rf_frequency_mhz", 35.0}}},
      {"geometry", {{"kind", "linear"}, {"segmentation", "linear"}, {"linear_segments", 2}}},
      {"optimizer", {{"weights", {{"w1", 10.0}, {"w2", 1.0}}}, {"nelder_mead", {{"restarts", 0}}}}},
      {"analysis", {{"strategy", "fixed-height"}, {"range", {-10.0, 10.0, 2.0}}, {"axial_mhz", 1.2}}},
      {"waveform", {{"weights", {{"locality", 0.5}}}, {"mode", "static"}}},
      {"simulate", {{"point", {15.0, 0.0, 43.52}}, {"start", "rest"}}},
      {"tilt", {{"zone", {0.0, 0.0, 50.0}}, {"degenerate_radial_mhz", nullptr}}},
      {"seeds", {3, 7}},
      {"threads", 2}};
  const RunConfig c = parse_run_config(custom);
  CHECK(c.ctx.rf_peak_voltage == 30.0);
  CHECK(c.ctx.rf_frequency_mhz() == doctest::Approx(35.0));
  CHECK(c.weights.w1 == 10.0);
  CHECK(c.optimizer.nelder_mead.restarts == 0);
  CHECK(c.analysis.range.step == 2.0);
  CHECK(*c.analysis.axial_mhz == 1.2);
  CHECK(c.waveform.weights.locality == 0.5);
  CHECK(c.waveform.weights.residual == 1e3);
  CHECK(*c.simulate.point == Vec3(15.0, 0.0, 43.52));
  CHECK_FALSE(c.tilt.degenerate_radial_mhz);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 7});

  // Round trip through the effective configuration.
  for (const RunConfig& r : {d, c}) {
    const json once = to_json(r);
    CHECK(to_json(parse_run_config(once)) == once);
  }
  RunConfig with_params = d;
  with_params.geometry.kind = "junction";
  with_params.geometry.params = JunctionParams::reference(50.0);
  const json wp = to_json(with_params);
  CHECK(to_json(parse_run_config(wp)) == wp);
}

TEST_CASE("configuration errors") {
  const std::vector<json> bad = {
      {{"bogus", 1}},
      {{"waveform", {{"weights", {{"smoothness3", 1.0}}}}}},
      {{"geometry", {{"kind", "hexagon"}}}},
      {{"geometry", {{"h", "fifty"}}}},
      {{"geometry", {{"kind", "junction"}}}},
      {{"geometry", {{"kind", "junction"}, {"params", {{"h", 50.0}}}}}},
      {{"optimizer", {{"weights", {{"w1", -1.0}}}}}},
      {{"optimizer", {{"points", 10.5}}}},
      {{"analysis", {{"strategy", "shortest"}}}},
      {{"analysis", {{"range", {0.0, 1.0}}}}},
      {{"waveform", {{"v_min", 5.0}, {"v_max", -5.0}}}},
      {{"simulate", {{"step_fraction", 0.05}}}},
      {{"simulate", {{"start", "sideways"}}}},
      {{"ctx", {{"rf_peak_voltage", 0.0}}}},
      {{"ctx", {{"species", "be9"}}}},
      {{"seeds", {-1}}},
      {{"threads", -2}},
      json::array()};
  for (const json& j : bad) {
    CAPTURE(j.dump());
    CHECK_THROWS_AS(parse_run_config(j), ConfigError);
  }
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("codes");
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({}).code == kExitInvalid);
  CHECK(run({"frobnicate"}).code == kExitInvalid);
  CHECK(run({"analyze", "--config", (dir / "missing.json").string()}).code == kExitInvalid);

  const fs::path weights = write_config(dir, {{"optimizer", {{"weights", {{"w1", -1.0}}}}}});
  const Result r = run({"optimize", "--config", weights.string(), "--out", (dir / "o").string()});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("non-negative") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run({"analyze", "--config", (dir / "broken.json").string()}).code == kExitInvalid);

  // Voltage bounds too tight for a static well.
  const fs::path tight = write_config(
      dir, {{"geometry", {{"kind", "linear"}, {"segmentation", "linear"}}},
            {"waveform",
             {{"start", {0.0, 0.0, 50.0}}, {"stop", {0.0, 0.0, 50.0}}, {"v_min", -0.01}, {"v_max", 0.01}}}});
  const Result inf = run({"waveform", "--config", tight.string(), "--out", (dir / "w").string()});
  CHECK(inf.code == kExitInfeasible);
  CHECK(inf.err.find("infeasible") != std::string::npos);

  // The reference layout has no outer pieces to tilt with.
  CHECK(run({"tilt", "--out", (dir / "t").string()}).code == kExitFailed);
}

TEST_CASE("analyze writes deterministic path files") {
  const fs::path dir = scratch("analyze");
  const fs::path cfg = write_config(
      dir, {{"analysis", {{"strategy", "fixed-height"}, {"range", {0.0, 40.0, 2.0}}, {"axial_mhz", 1.5}}}});
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run({"analyze", "--config", cfg.string(), "--out", a}).code == kExitOk);
  REQUIRE(run({"analyze", "--config", cfg.string(), "--out", b, "--threads", "1"}).code == kExitOk);
  const std::string csv = slurp(fs::path(a) / "path_fixed-height.csv");
  CHECK(csv == slurp(fs::path(b) / "path_fixed-height.csv"));
  CHECK(csv.rfind("x,y,z,phi_pp_meV,laplacian_meV_um2,f_axial_MHz,f_r1_MHz,f_r2_MHz\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 22);

  const json summary = json::parse(slurp(fs::path(a) / "analysis_summary.json"));
  CHECK(summary["samples"] == 21);
  CHECK(summary["min_height"].get<double>() == doctest::Approx(50.0));

  // The effective configuration reruns to the same output.
  const fs::path eff = fs::path(a) / "effective_config.json";
  const RunConfig reread = parse_run_config(json::parse(slurp(eff)));
  CHECK(reread.output == a);
  const std::string c = (dir / "c").string();
  REQUIRE(run({"analyze", "--config", eff.string(), "--out", c}).code == kExitOk);
  CHECK(slurp(fs::path(c) / "path_fixed-height.csv") == csv);

  const fs::path empty = write_config(dir, {{"analysis", {{"range", {5.0, 0.0, 1.0}}}}});
  const std::string e = (dir / "e").string();
  REQUIRE(run({"analyze", "--config", empty.string(), "--out", e}).code == kExitOk);
  CHECK(slurp(fs::path(e) / "path_min-pp.csv") ==
        "x,y,z,phi_pp_meV,laplacian_meV_um2,f_axial_MHz,f_r1_MHz,f_r2_MHz\n");
}

TEST_CASE("optimize honours the seed list") {
  const fs::path dir = scratch("optimize");
  const fs::path cfg = write_config(
      dir, {{"optimizer", {{"nelder_mead", {{"max_evaluations", 60}, {"restarts", 0}}}}}});
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  const Result r = run({"optimize", "--config", cfg.string(), "--out", a, "--seeds", "1"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("d_in") != std::string::npos);
  CHECK(r.out.find("y_o3") != std::string::npos);
  REQUIRE(run({"optimize", "--config", cfg.string(), "--out", b, "--seeds", "1"}).code == kExitOk);
  CHECK(slurp(fs::path(a) / "optimize_report.json") == slurp(fs::path(b) / "optimize_report.json"));
  const json report = json::parse(slurp(fs::path(a) / "optimize_report.json"));
  CHECK(report["seeds"].size() == 1);
  CHECK(report["seeds"][0]["seed"] == 1);
  const JunctionParams best = JunctionParams::from_json(json::parse(slurp(fs::path(a) / "best_geometry.json")));
  CHECK_NOTHROW(best.validate());
  CHECK(json::parse(slurp(fs::path(a) / "effective_config.json"))["seeds"] == json::array({1}));
}

TEST_CASE("waveform, simulate, tilt and export commands") {
  const fs::path dir = scratch("commands");
  const json linear = {{"kind", "linear"}, {"segmentation", "linear"}, {"linear_segments", 6}};

  const fs::path single = write_config(
      dir, {{"geometry", linear}, {"waveform", {{"start", {0.0, 0.0, 50.0}}, {"stop", {0.0, 0.0, 50.0}}}}});
  const std::string w = (dir / "w").string();
  REQUIRE(run({"waveform", "--config", single.string(), "--out", w}).code == kExitOk);
  CHECK(fs::exists(fs::path(w) / "static_wells.csv"));
  CHECK(slurp(fs::path(w) / "static_wells.csv").rfind("step,c,", 0) == 0);
  const json ws = json::parse(slurp(fs::path(w) / "waveform_summary.json"));
  CHECK(ws["pass"] == true);
  CHECK(ws["axial_min_mhz"].get<double>() == doctest::Approx(1.5).epsilon(1e-3));

  const fs::path transport = write_config(
      dir, {{"geometry", linear}, {"waveform", {{"start", {-20.0, 0.0, 50.0}}, {"stop", {20.0, 0.0, 50.0}}, {"step", 10.0}}}});
  const std::string t = (dir / "t").string();
  REQUIRE(run({"waveform", "--config", transport.string(), "--out", t}).code == kExitOk);
  const std::string diag = slurp(fs::path(t) / "diagnostics.csv");
  CHECK(diag.rfind("step,x,y,z,f_axial,f_r1,f_r2,residual_field\n", 0) == 0);
  CHECK(std::count(diag.begin(), diag.end(), '\n') == 6);

  const fs::path sim = write_config(
      dir, {{"geometry", linear},
            {"simulate", {{"point", {0.0, 0.0, 49.95}}, {"targets_mhz", {4.0, 3.0, 1.5}}, {"duration_us", 1.0}}}});
  const std::string s = (dir / "s").string();
  const Result sr = run({"simulate", "--config", sim.string(), "--out", s});
  // At the RF null the micromotion and its estimate both vanish: the ratio is not defined.
  CHECK(sr.code != kExitInvalid);
  const json ss = json::parse(slurp(fs::path(s) / "simulate_summary.json"));
  CHECK(ss["escaped"] == false);
  CHECK(slurp(fs::path(s) / "trajectory.csv").rfind("t_us,x,y,z,vx,vy,vz\n", 0) == 0);
  CHECK(json::parse(slurp(fs::path(s) / "compensation.json"))["voltages"].size() ==
        build_layout(parse_run_config({{"geometry", linear}}).geometry)
            .names_with_role(ElectrodeRole::control)
            .size());

  const fs::path tilt = write_config(
      dir, {{"geometry", {{"kind", "linear"}, {"segmentation", "linear"}, {"linear_segments", 0}}}});
  const std::string tl = (dir / "tilt").string();
  REQUIRE(run({"tilt", "--config", tilt.string(), "--out", tl}).code == kExitOk);
  const json tj = json::parse(slurp(fs::path(tl) / "tilt.json"));
  CHECK(tj["angle_high_deg"].get<double>() == doctest::Approx(20.0).epsilon(1e-3));
  CHECK(tj["splitting_mhz"].get<double>() > 0.0);

  const std::string g = (dir / "g").string();
  REQUIRE(run({"export-geometry", "--out", g}).code == kExitOk);
  const ElectrodeLayout exported = layout_from_json(json::parse(slurp(fs::path(g) / "layout.json")));
  CHECK(exported.names() == build_layout(GeometryConfig{}).names());
  const fs::path from_file = write_config(
      dir, {{"geometry", {{"kind", "file"}, {"layout_file", (fs::path(g) / "layout.json").string()}}},
            {"analysis", {{"range", {0.0, 4.0, 2.0}}}}});
  CHECK(run({"analyze", "--config", from_file.string(), "--out", (dir / "f").string()}).code == kExitOk);
}

TEST_CASE("shipped experiment configurations parse") {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(XJ_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    const RunConfig c = parse_run_config(json::parse(slurp(entry.path())));
    CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));
    ++count;
  }
  CHECK(count >= 10);
}
