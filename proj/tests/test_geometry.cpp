#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "xjunction/geometry.hpp"

using namespace xjunction;

namespace {

using Ring = std::vector<Vec2>;

std::multiset<Ring> polygon_set(const ElectrodeLayout& layout, double a, double b, double c,
                                double d) {
  std::multiset<Ring> out;
  for (const auto& e : layout.electrodes())
    for (const auto& p : e.polygons) out.insert(p.mapped(a, b, c, d).canonical_vertices());
  return out;
}

double total_area(const ElectrodeLayout& layout) {
  double s = 0.0;
  for (const auto& e : layout.electrodes()) s += e.area();
  return s;
}

double dist_to_origin_line(Vec2 p) { return std::abs(p.y); }

}  // namespace

TEST_CASE("polygon normalizes orientation and rejects bad input") {
  Polygon cw({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
  CHECK(cw.signed_area() == doctest::Approx(1.0));
  CHECK(cw.centroid().x == doctest::Approx(0.5));
  CHECK(cw.contains({0.5, 0.5}));
  CHECK_FALSE(cw.contains({1.5, 0.5}));
  CHECK_FALSE(cw.contains({1.0, 0.5}));  // boundary

  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}}), GeometryError);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}, {2, 0}}), GeometryError);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 1}, {1, 0}, {0, 1}}), GeometryError);  // bow tie
  Polygon dup({{0, 0}, {1, 0}, {1, 0}, {1, 1}, {0, 0}});
  CHECK(dup.size() == 3);
}

TEST_CASE("convex clipping") {
  Polygon sq({{0, 0}, {2, 0}, {2, 2}, {0, 2}});
  const std::vector<Vec2> half = {{1, -5}, {5, -5}, {5, 5}, {1, 5}};
  auto c = clip_to_convex(sq, half);
  REQUIRE(c);
  CHECK(c->area() == doctest::Approx(2.0));
  const std::vector<Vec2> away = {{3, 0}, {4, 0}, {4, 1}, {3, 1}};
  CHECK_FALSE(clip_to_convex(sq, away));
  // non-convex subject split by a clip band is kept when the result is simple
  Polygon ell({{0, 0}, {3, 0}, {3, 1}, {1, 1}, {1, 3}, {0, 3}});
  const std::vector<Vec2> band = {{-1, 0.5}, {4, 0.5}, {4, 2}, {-1, 2}};
  auto e = clip_to_convex(ell, band);
  REQUIRE(e);
  CHECK(e->area() == doctest::Approx(0.5 * 3 + 1.0 * 1));
}

TEST_CASE("linear five-wire widths") {
  const auto d = linear_rf_dimensions(50.0);
  CHECK(d.gap_width == doctest::Approx(41.5).epsilon(1e-12));
  CHECK(d.rf_width == doctest::Approx(99.5).epsilon(1e-12));
  CHECK(linear_rf_dimensions(100.0).gap_width == doctest::Approx(83.0));
  for (double h = 30.0; h <= 100.0; h += 7.0) {
    const auto dh = linear_rf_dimensions(h);
    CHECK(dh.gap_width / h == doctest::Approx(0.83).epsilon(5e-5));
    CHECK(dh.rf_width / h == doctest::Approx(1.99).epsilon(5e-5));
  }
  CHECK_THROWS_AS(linear_rf_dimensions(0.0), GeometryError);
  CHECK_THROWS_AS(build_linear_fivewire(-1.0, 1000.0), GeometryError);
  CHECK_THROWS_AS(build_linear_fivewire(50.0, 100.0), GeometryError);

  // zero of d/dz of the two-strip potential on axis, found by bisection
  const double a = d.inner_edge(), b = d.outer_edge();
  auto dtheta_dz = [&](double z) { return -b / (z * z + b * b) + a / (z * z + a * a); };
  double lo = 1.0, hi = 200.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (dtheta_dz(lo) * dtheta_dz(mid) <= 0.0 ? hi : lo) = mid;
  }
  CHECK(0.5 * (lo + hi) == doctest::Approx(49.9519).epsilon(1e-5));
  CHECK(std::sqrt(a * b) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-9));

  const auto layout = build_linear_fivewire(50.0, 500.0);
  layout.validate();
  CHECK(layout.names_with_role(ElectrodeRole::rf) == std::vector<std::string>{"rf"});
  CHECK(layout.electrode("rf").area() == doctest::Approx(2 * 1000.0 * 99.5));
  CHECK(total_area(layout) == doctest::Approx(1000.0 * 1000.0));
}

TEST_CASE("spline sampling") {
  const auto p = JunctionParams::reference(50.0);
  const auto spline = p.inner_spline();
  const auto s = spline.sample(21);
  REQUIRE(s.size() == 21);
  CHECK(s.front() == spline.control_points().front());
  CHECK(s.back() == spline.control_points().back());
  for (int i = 0; i < 21; ++i) {
    CHECK(s[i].x == s[20 - i].y);
    CHECK(s[i].y == s[20 - i].x);
  }
  // the mirrored half agrees with direct evaluation
  for (int i = 11; i < 20; ++i) {
    const Vec2 direct = spline.evaluate(i / 20.0);
    CHECK(direct.x == doctest::Approx(s[i].x).epsilon(1e-12));
    CHECK(direct.y == doctest::Approx(s[i].y).epsilon(1e-12));
  }
  // basis weights at t = 0.5 and t = 0.25 from an independent B-spline evaluation
  const auto& c = spline.control_points();
  const Vec2 mid = spline.evaluate(0.5);
  CHECK(mid.x == doctest::Approx(0.25 * c[1].x + 0.5 * c[2].x + 0.25 * c[3].x).epsilon(1e-12));
  const Vec2 q = spline.evaluate(0.25);
  CHECK(q.y == doctest::Approx(0.125 * c[0].y + 0.59375 * c[1].y + 0.25 * c[2].y +
                               0.03125 * c[3].y)
                   .epsilon(1e-12));
  CHECK_THROWS_AS(SplineBoundary({Vec2{1, 0}, Vec2{2, 1}, Vec2{1, 1}, Vec2{1, 2}, Vec2{0, 2}}),
                  GeometryError);
}

TEST_CASE("reference junction parameters") {
  const auto p = JunctionParams::reference(50.0);
  CHECK(p.d_in == doctest::Approx(3.73).epsilon(2e-3));
  CHECK(p.x_i2 == doctest::Approx(14.71).epsilon(2e-3));
  CHECK(p.y_i2 == doctest::Approx(27.43).epsilon(2e-3));
  CHECK(p.y_i3 == doctest::Approx(123.19).epsilon(2e-3));
  CHECK(p.d_out == doctest::Approx(51.89).epsilon(2e-3));
  CHECK(p.x_o2 == doctest::Approx(89.31).epsilon(2e-3));
  CHECK(p.y_o2 == doctest::Approx(121.72).epsilon(2e-3));
  CHECK(p.y_o3 == doctest::Approx(249.32).epsilon(2e-3));
  const auto round = JunctionParams::from_json(p.to_json());
  CHECK(round.normalized() == p.normalized());
  CHECK(round.arm_length == p.arm_length);
}

TEST_CASE("junction layout is valid and D4 symmetric") {
  const auto layout = build_junction(JunctionParams::reference(50.0));
  layout.validate();
  CHECK(layout.electrode("rf").polygons.size() == 4);
  const auto base = polygon_set(layout, 1, 0, 0, 1);
  CHECK(polygon_set(layout, 0, 1, 1, 0) == base);   // y = x mirror
  CHECK(polygon_set(layout, -1, 0, 0, 1) == base);  // x -> -x
  CHECK(polygon_set(layout, 1, 0, 0, -1) == base);  // y -> -y

  auto fin = JunctionParams::reference(50.0);
  fin.with_final_arms();
  const auto finite = build_junction(fin);
  finite.validate();
  CHECK(total_area(finite) == doctest::Approx(1500.0 * (750.0 + 2700.0)));
}

TEST_CASE("junction parameter errors") {
  auto p = JunctionParams::reference(50.0);
  p.d_out = p.d_in * 0.5;
  CHECK_THROWS_AS(build_junction(p), GeometryError);
  p = JunctionParams::reference(50.0);
  p.y_i3 = -1.0;
  CHECK_THROWS_AS(build_junction(p), GeometryError);
  p = JunctionParams::reference(50.0);
  p.x_o2 = 400.0;  // outer spline swings across the inner one
  p.y_o2 = 2.0;
  try {
    build_junction(p);
    FAIL("expected a geometry error");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("quadrant") != std::string::npos);
  }
}

TEST_CASE("naive junction") {
  const auto layout = build_naive_junction(50.0, 1000.0);
  layout.validate();
  const auto& rf = layout.electrode("rf");
  CHECK(rf.polygons.size() == 4);
  CHECK(polygon_set(layout, 0, -1, 1, 0) == polygon_set(layout, 1, 0, 0, 1));
  // union of the four rails minus the channels, by inclusion-exclusion
  const double a = 20.75, b = 120.25, L = 1000.0;
  const double strip = (L - a) * (b - a);
  const double expected = 4.0 * (2.0 * strip - (b - a) * (b - a));
  CHECK(rf.area() == doctest::Approx(expected));
  CHECK(total_area(layout) == doctest::Approx(4.0 * L * L));
}

TEST_CASE("segmentation of the fabricated junction") {
  auto p = JunctionParams::reference(50.0);
  p.with_final_arms();
  const auto base = build_junction(p);
  const auto seg = segment_controls(base, SegmentationPlan::reference());
  seg.validate();
  int middle_segments = 0;
  for (const auto& name : seg.names_with_role(ElectrodeRole::control)) {
    if (name == "c" || (name.size() >= 2 && std::isdigit(static_cast<unsigned char>(name[1]))))
      ++middle_segments;
  }
  CHECK(middle_segments == 48);
  CHECK(seg.contains("U3"));
  CHECK(seg.contains("D20"));
  CHECK_FALSE(seg.contains("U10"));
  CHECK(seg.contains("R_thin_U"));
  CHECK(seg.contains("D_wide_L"));
  CHECK(total_area(seg) == doctest::Approx(total_area(base)).epsilon(1e-9));

  const auto c = seg.electrode("c").polygons.front().bounds();
  CHECK(c.hi.x - c.lo.x == doctest::Approx(30.0));
  const auto u1 = seg.electrode("U1").polygons.front().bounds();
  CHECK(u1.hi.y - u1.lo.y == doctest::Approx(40.0));
  const auto u2 = seg.electrode("U2").polygons.front().bounds();
  CHECK(u2.hi.y - u2.lo.y == doctest::Approx(75.0));
  const auto thin = seg.electrode("R_thin_U").polygons.front().bounds();
  CHECK(thin.hi.y - 120.25 == doctest::Approx(49.75));
  const auto wide = seg.electrode("R_wide_U").polygons.front().bounds();
  CHECK(wide.hi.y - wide.lo.y == doctest::Approx(580.0));

  const auto same = segment_controls(base, SegmentationPlan{});
  CHECK(same.names() == base.names());

  auto too_long = SegmentationPlan::reference();
  too_long.segments_per_arm[0] = 12;
  CHECK_THROWS_AS(segment_controls(base, too_long), GeometryError);
}

TEST_CASE("segmentation of the linear trap") {
  const auto base = build_linear_fivewire(50.0, 1000.0);
  const auto seg = segment_controls(base, SegmentationPlan::linear(5));
  seg.validate();
  CHECK(seg.contains("c"));
  CHECK(seg.contains("R5"));
  CHECK(seg.contains("L5"));
  CHECK(seg.contains("thin_U"));
  CHECK(seg.contains("wide_D"));
  CHECK(total_area(seg) == doctest::Approx(total_area(base)).epsilon(1e-9));
  const auto r1 = seg.electrode("R1").polygons.front().bounds();
  CHECK(r1.lo.x == doctest::Approx(37.5));
  CHECK(r1.hi.x == doctest::Approx(112.5));
}

TEST_CASE("gap offset") {
  const std::vector<Vec2> line = {{0, 10}, {50, 10}, {100, 10}};
  const auto same = offset_gap(line, 0.0);
  CHECK(same == line);
  const auto shifted = offset_gap(line, 5.0);
  for (Vec2 p : shifted) CHECK(dist_to_origin_line(p) == doctest::Approx(15.0));

  const double r = 100.0;
  std::vector<Vec2> circle;
  for (int i = 0; i < 100; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 100;
    circle.push_back({r * std::cos(t), r * std::sin(t)});
  }
  const auto grown = offset_gap(circle, 5.0, OffsetSide::right, true);
  for (Vec2 p : grown) CHECK(norm(p) - r == doctest::Approx(5.0).epsilon(2e-3));

  std::vector<Vec2> small;
  for (Vec2 p : circle) small.push_back(0.03 * p);
  CHECK_THROWS_AS(offset_gap(small, 5.0, OffsetSide::left, true), GeometryError);
  CHECK_THROWS_AS(offset_gap(line, -1.0), std::invalid_argument);
}

TEST_CASE("layout serialization") {
  const auto layout = build_naive_junction(50.0, 600.0);
  const auto back = layout_from_json(nlohmann::json::parse(layout_to_json(layout).dump()));
  CHECK(back.names() == layout.names());
  CHECK(polygon_set(back, 1, 0, 0, 1) == polygon_set(layout, 1, 0, 0, 1));
  CHECK(back.params == layout.params);

  std::ostringstream csv;
  write_polyline_csv(csv, JunctionParams::reference().inner_spline().sample());
  std::string first;
  std::istringstream in(csv.str());
  std::getline(in, first);
  CHECK(first == "x_um,y_um");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 21);

  const auto resampled = resample_polyline(std::vector<Vec2>{{0, 0}, {3, 0}, {3, 1}}, 5);
  CHECK(resampled[2].x == doctest::Approx(2.0));
  CHECK(resampled.back() == Vec2{3, 1});
}
