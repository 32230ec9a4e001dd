#include <doctest.h>

#include <cmath>
#include <sstream>

#include "xjunction/waveform.hpp"

using namespace xjunction;

namespace {

const PhysicalContext kCtx = PhysicalContext::calcium40();

struct LinearZone {
  ElectrodeLayout layout;
  FieldModel model;
  double null;
  explicit LinearZone(bool split_outer = true)
      : layout(segment_controls(build_linear_fivewire(50.0, 5.0e5),
                                SegmentationPlan::linear(6, split_outer))),
        model(layout) {
    const auto d = linear_rf_dimensions(50.0);
    null = strip2d::null_height(d.inner_edge(), d.outer_edge());
  }
  std::vector<Vec3> path(double from, double to, double step) const {
    std::vector<Vec3> out;
    for (double x = from; x <= to + 1e-9; x += step) out.emplace_back(x, 0.0, null);
    return out;
  }
};

const LinearZone& zone() {
  static const LinearZone z;
  return z;
}

double difference_energy(const Waveform& w) {
  double s = 0.0;
  for (std::size_t i = 1; i < w.steps.size(); ++i) s += (w.steps[i] - w.steps[i - 1]).squaredNorm();
  return s;
}

void check_constraints(const Waveform& w, const TransportRequest& req, const FieldTable& t) {
  const auto axes = req.axes.empty() ? default_axes(req.positions) : req.axes;
  for (std::size_t i = 0; i < w.steps.size(); ++i) {
    const auto& d = w.diagnostics[i];
    const double target = kCtx.curvature_for_frequency(req.axial_at(i));
    CHECK(d.residual_field.norm() < 1e-3);
    CHECK(d.alignment < 1e-6);
    CHECK(std::abs(d.axial_curvature - target) < 1e-6);
    const Vec3 tr = Vec3::UnitZ().cross(axes[i]);
    CHECK(tr.dot(d.hessian * tr) >= req.radial_floor * target - 1e-8);
    CHECK(d.hessian(2, 2) >= req.radial_floor * target - 1e-8);
    CHECK(w.steps[i].minCoeff() >= req.v_min - 1e-9);
    CHECK(w.steps[i].maxCoeff() <= req.v_max + 1e-9);
    CHECK(static_cast<std::size_t>(w.steps[i].size()) == t.size());
  }
}

}  // namespace

TEST_CASE("field table entries") {
  const auto& z = zone();
  const std::vector<Vec3> pts = {Vec3(10.0, 3.0, 48.0), Vec3(-60.0, -2.0, 55.0)};
  const std::vector<std::string> names = {"c", "R1", "thin_U"};
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, pts, names);
  REQUIRE(t.steps() == 2);
  REQUIRE(t.size() == 3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const FieldSample s = basis_field(z.layout, names[j], pts[i]);
      CHECK((t.field[i].col(j) + 1e6 * s.gradient).norm() <= 1e-12 * (1e6 * s.gradient).norm());
      CHECK((t.hessian[i][j] - 1e3 * s.hessian).norm() <= 1e-12 * (1e3 * s.hessian).norm());
      const auto e = t.hessian_elements(i, j);
      CHECK(e[1] == t.hessian[i][j](0, 1));
      CHECK(e[4] == t.hessian[i][j](1, 2));
    }
  const FieldTable again = build_field_table(z.layout, kCtx, pts, names);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK((again.field[i] - t.field[i]).cwiseAbs().maxCoeff() <= 1e-12 * t.field[i].cwiseAbs().maxCoeff());
    CHECK((again.pseudo_hessian[i] - t.pseudo_hessian[i]).norm() <=
          1e-12 * t.pseudo_hessian[i].norm());
  }

  // Axial curvature of the segment under the ion, against differences of the potential.
  const Vec3 p(0.0, 0.0, z.null);
  const FieldTable one = build_field_table(z.model, z.layout, kCtx, std::span(&p, 1),
                                           std::vector<std::string>{"c"});
  const double e = 0.05;
  auto pot = [&](double x) { return 1e3 * z.model.basis_potential("c", Vec3(x, 0.0, z.null)); };
  const double fd = (pot(e) - 2.0 * pot(0.0) + pot(-e)) / (e * e);
  CHECK(one.hessian[0][0](0, 0) == doctest::Approx(fd).epsilon(1e-4));
  CHECK(one.hessian[0][0](0, 0) < 0.0);

  // RF null: no pseudopotential force
  CHECK(one.pseudo_field[0].norm() < 1e-2);

  const std::vector<std::string> rf = {"rf"};
  CHECK_THROWS_AS(build_field_table(z.model, z.layout, kCtx, pts, rf), WaveformError);
  CHECK(build_field_table(z.model, z.layout, kCtx, pts).size() ==
        z.layout.names_with_role(ElectrodeRole::control).size());
}

TEST_CASE("middle segment selection") {
  auto p = JunctionParams::reference(50.0);
  p.with_final_arms();
  const auto layout = segment_controls(build_junction(p), SegmentationPlan::reference());
  const auto names = middle_segments(layout);
  CHECK(names.size() == 48);
  CHECK(std::find(names.begin(), names.end(), "c") != names.end());
  CHECK(std::find(names.begin(), names.end(), "D20") != names.end());
  CHECK(std::find(names.begin(), names.end(), "U_thin_R") == names.end());
}

TEST_CASE("default axes follow the arms") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 5; ++i) pts.emplace_back(40.0 - 10.0 * i, 0.0, 50.0);
  for (int i = 1; i <= 5; ++i) pts.emplace_back(0.0, 10.0 * i, 50.0);
  const auto a = default_axes(pts);
  CHECK(a[0] == Vec3::UnitX());
  CHECK(a[4] == Vec3::UnitX());
  CHECK(a[5] == Vec3::UnitY());
  CHECK(a[9] == Vec3::UnitY());
  CHECK(default_axes(std::vector<Vec3>{Vec3(0, 0, 50)})[0] == Vec3::UnitX());
  CHECK(default_axes(std::vector<Vec3>{Vec3(0, 400, 50)})[0] == Vec3::UnitY());
  CHECK(default_axes(std::vector<Vec3>{Vec3(-300, 2, 50)})[0] == Vec3::UnitX());
}

TEST_CASE("transport along a linear zone") {
  const auto& z = zone();
  TransportRequest req;
  req.positions = z.path(-75.0, 75.0, 5.0);
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, req.positions, middle_segments(z.layout));
  const Waveform w = generate(req, t, kCtx);
  REQUIRE(w.steps.size() == req.positions.size());
  CHECK(w.status == QpStatus::optimal);
  check_constraints(w, req, t);

  const auto axes = default_axes(req.positions);
  const auto v = verify(w, z.model, kCtx, axes, 1);
  for (const auto& d : v) {
    CHECK(d.residual_field.norm() < 1e-3);
    REQUIRE(d.frequency_mhz[0]);
    CHECK(*d.frequency_mhz[0] == doctest::Approx(1.5).epsilon(1e-3));
    CHECK(d.stable);
  }
  // mirror symmetry of the zone about x = 0
  const std::size_t n = w.steps.size();
  const auto first = w.voltages(0), last = w.voltages(n - 1);
  CHECK(first.at("L1") == doctest::Approx(last.at("R1")).epsilon(1e-6));

  SUBCASE("per-volt linearity") {
    Waveform bumped = w;
    const std::size_t j = 3;
    bumped.steps[2][j] += 1e-3;
    const auto vb = verify(bumped, z.model, kCtx, axes, 1);
    const Vec3 expect = v[2].residual_field + 1e-3 * t.field[2].col(j);
    CHECK((vb[2].residual_field - expect).norm() < 1e-6 * t.field[2].col(j).norm());
  }
}

TEST_CASE("smoothness weight") {
  const auto& z = zone();
  TransportRequest req;
  req.positions = z.path(-40.0, 40.0, 10.0);
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, req.positions, middle_segments(z.layout));
  double previous = std::numeric_limits<double>::infinity();
  for (double s : {0.1, 1.0, 10.0}) {
    req.weights.smoothness1 = s;
    const Waveform w = generate(req, t, kCtx);
    check_constraints(w, req, t);
    const double e = difference_energy(w);
    CHECK(e < previous);
    previous = e;
  }
}

TEST_CASE("static wells") {
  const auto& z = zone();
  TransportRequest req;
  req.positions = {Vec3(0.0, 0.0, z.null)};
  req.weights.smoothness1 = 0.0;
  req.weights.smoothness2 = 0.0;
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, req.positions, middle_segments(z.layout));
  const Waveform single = generate(req, t, kCtx);
  const Waveform well = static_wells(req, t, kCtx);
  check_constraints(single, req, t);
  CHECK((single.steps[0] - well.steps[0]).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(single.min_voltage() >= -2.0);
  CHECK(single.max_voltage() <= 5.0);

  TransportRequest many;
  many.positions = z.path(-20.0, 20.0, 10.0);
  const FieldTable tm = build_field_table(z.model, z.layout, kCtx, many.positions, middle_segments(z.layout));
  const Waveform wells = static_wells(many, tm, kCtx);
  check_constraints(wells, many, tm);
}

TEST_CASE("infeasible requests name a constraint class") {
  const auto& z = zone();
  TransportRequest req;
  req.positions = z.path(-10.0, 10.0, 5.0);
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, req.positions, middle_segments(z.layout));
  req.v_min = -0.01;
  req.v_max = 0.01;
  try {
    generate(req, t, kCtx);
    FAIL("expected infeasibility");
  } catch (const WaveformInfeasible& e) {
    CHECK(std::string(e.what()).find("infeasible") != std::string::npos);
    CHECK(e.step() < req.positions.size());
  }
  // transverse curvature cannot exceed the trace left over by the pseudopotential
  req.v_min = -1e3;
  req.v_max = 1e3;
  req.radial_floor = 1e3;
  CHECK_THROWS_AS(generate(req, t, kCtx), WaveformInfeasible);
}

TEST_CASE("request validation") {
  const auto& z = zone();
  TransportRequest req;
  req.positions = z.path(-10.0, 10.0, 5.0);
  const FieldTable t = build_field_table(z.model, z.layout, kCtx, req.positions, middle_segments(z.layout));
  TransportRequest bad = req;
  bad.axial_mhz = {-1.0};
  CHECK_THROWS_AS(generate(bad, t, kCtx), WaveformError);
  bad = req;
  bad.positions[2].x() += 200.0;
  CHECK_THROWS_AS(generate(bad, t, kCtx), WaveformError);
  bad = req;
  bad.positions.pop_back();
  CHECK_THROWS_AS(generate(bad, t, kCtx), WaveformError);
  bad = req;
  bad.axial_mhz = {1.5, 1.5};
  CHECK_THROWS_AS(generate(bad, t, kCtx), WaveformError);
  bad = req;
  bad.weights.locality = -1.0;
  CHECK_THROWS_AS(generate(bad, t, kCtx), WaveformError);
}

TEST_CASE("waveform csv") {
  Waveform w;
  w.electrodes = {"a", "b"};
  w.positions = {Vec3(0, 0, 50), Vec3(1, 0, 50)};
  w.steps = {Eigen::Vector2d(1.0, -0.5), Eigen::Vector2d(0.25, 2.0)};
  StepDiagnostics d;
  d.frequency_mhz = {1.5, 3.0, std::nullopt};
  w.diagnostics = {d, d};
  std::ostringstream a, b;
  write_waveform_csv(a, w);
  write_diagnostics_csv(b, w);
  CHECK(a.str() == "step,a,b\n0,1,-0.5\n1,0.25,2\n");
  CHECK(b.str() == "step,x,y,z,f_axial,f_r1,f_r2,residual_field\n0,0,0,50,1.5,3,,0\n"
                   "1,1,0,50,1.5,3,,0\n");
}

TEST_CASE("radial tilt") {
  const auto& z = zone();
  const Vec3 p(0.0, 0.0, z.null);
  TiltOptions opt;
  const TiltResult base = optimize_radial_tilt(z.layout, kCtx, p, 20.0, opt);
  CHECK(base.splitting_mhz > 0.0);
  CHECK(base.angle_high_deg == doctest::Approx(20.0).epsilon(1e-3));
  CHECK(base.angle_low_deg == doctest::Approx(70.0).epsilon(1e-3));
  // degenerate radials before the tilt
  const PseudoSample ps = z.model.pseudo(base.ctx, p, true);
  CHECK(base.ctx.frequency_mhz(ps.hessian(1, 1)) == doctest::Approx(6.06).epsilon(1e-3));
  CHECK(base.ctx.frequency_mhz(ps.hessian(2, 2)) == doctest::Approx(6.06).epsilon(1e-3));
  bool at_limit = false;
  for (const auto& [name, v] : base.voltages) {
    CHECK(std::abs(v) <= 10.0 + 1e-6);
    at_limit = at_limit || std::abs(v) > 10.0 - 1e-3;
  }
  CHECK(at_limit);

  TiltOptions none = opt;
  none.v_min = none.v_max = 0.0;
  const TiltResult flat = optimize_radial_tilt(z.layout, kCtx, p, 20.0, none);
  CHECK(std::abs(flat.curvature_difference) < 1e-6);
  CHECK(flat.splitting_mhz < 1e-5);

  double previous = 0.0;
  for (double scale : {0.5, 1.0, 2.0}) {
    TiltOptions o = opt;
    o.v_min = -10.0 * scale;
    o.v_max = 10.0 * scale;
    const TiltResult r = optimize_radial_tilt(z.layout, kCtx, p, 20.0, o);
    CHECK(r.curvature_difference > previous);
    CHECK(r.curvature_difference == doctest::Approx(scale * base.curvature_difference).epsilon(1e-4));
    previous = r.curvature_difference;
  }

  TiltOptions nothing = opt;
  nothing.electrodes = {};
  const LinearZone plain(false);
  CHECK_THROWS_AS(optimize_radial_tilt(plain.layout, kCtx, p, 20.0, nothing), WaveformError);
}
