#include <algorithm>
#include <cmath>
#include <string>

#include "xjunction/geometry.hpp"

namespace xjunction {

namespace {

// Cox–de Boor evaluation for the clamped knot vector [0,0,0,0,.5,1,1,1,1].
Vec2 de_boor(const std::array<Vec2, 5>& c, double t) {
  static constexpr std::array<double, 9> knots = {0, 0, 0, 0, 0.5, 1, 1, 1, 1};
  constexpr int p = 3;
  t = std::clamp(t, 0.0, 1.0);
  const int k = t < 0.5 ? 3 : 4;  // knot span index
  std::array<Vec2, p + 1> d;
  for (int j = 0; j <= p; ++j) d[j] = c[j + k - p];
  for (int r = 1; r <= p; ++r) {
    for (int j = p; j >= r; --j) {
      const double lo = knots[j + k - p];
      const double hi = knots[j + 1 + k - r];
      const double alpha = (t - lo) / (hi - lo);
      d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
    }
  }
  return d[p];
}

Vec2 swap_xy(Vec2 p) { return {p.y, p.x}; }

void require_positive(double v, const char* name) {
  if (!(std::isfinite(v) && v > 0.0))
    throw GeometryError(std::string(name) + " must be positive");
}

std::vector<Vec2> mapped(std::span<const Vec2> pts, double sx, double sy) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (Vec2 p : pts) out.push_back({sx * p.x, sy * p.y});
  return out;
}

struct Quadrant {
  const char* name;
  double sx, sy;
  Arm horizontal, vertical;
};

constexpr std::array<Quadrant, 4> kQuadrants = {{
    {"q1", 1.0, 1.0, Arm::R, Arm::U},
    {"q2", -1.0, 1.0, Arm::L, Arm::U},
    {"q3", -1.0, -1.0, Arm::L, Arm::D},
    {"q4", 1.0, -1.0, Arm::R, Arm::D},
}};

double arm_len(const JunctionParams& p, Arm a) { return p.arm_length[static_cast<int>(a)]; }

// RF ring of one quadrant in the canonical (first-quadrant) frame.
std::vector<Vec2> canonical_rf_ring(const JunctionParams& p, std::span<const Vec2> inner,
                                    std::span<const Vec2> outer, double lx, double ly) {
  const double a = p.gap_width / 2.0, b = a + p.rf_width;
  std::vector<Vec2> ring(inner.begin(), inner.end());
  ring.push_back({a, ly});
  ring.push_back({b, ly});
  ring.insert(ring.end(), outer.rbegin(), outer.rend());
  ring.push_back({lx, b});
  ring.push_back({lx, a});
  return ring;
}

}  // namespace

SplineBoundary::SplineBoundary(std::array<Vec2, 5> control_points) : control_(control_points) {
  for (int i = 0; i < 5; ++i) {
    const Vec2 m = swap_xy(control_[4 - i]);
    if (std::abs(m.x - control_[i].x) > 1e-12 * (1.0 + std::abs(m.x)) ||
        std::abs(m.y - control_[i].y) > 1e-12 * (1.0 + std::abs(m.y)))
      throw GeometryError("spline control polygon is not symmetric about y = x");
  }
}

Vec2 SplineBoundary::evaluate(double t) const { return de_boor(control_, t); }

std::vector<Vec2> SplineBoundary::sample(int count) const {
  if (count < 2) throw std::invalid_argument("spline sample count must be at least 2");
  std::vector<Vec2> out(count);
  out.front() = control_.front();
  out.back() = control_.back();
  for (int i = 1; 2 * i < count - 1; ++i) {
    out[i] = evaluate(static_cast<double>(i) / (count - 1));
    out[count - 1 - i] = swap_xy(out[i]);
  }
  if (count % 2 == 1) {
    const Vec2 m = evaluate(0.5);
    const double d = 0.5 * (m.x + m.y);
    out[count / 2] = {d, d};
  }
  return out;
}

LinearRfDimensions linear_rf_dimensions(double h) {
  if (!(std::isfinite(h) && h > 0.0)) throw GeometryError("ion height must be positive");
  const double wg = 0.83 * h;
  return {wg, 1.99 * h};
}

std::string_view arm_name(Arm arm) {
  switch (arm) {
    case Arm::R:
      return "R";
    case Arm::U:
      return "U";
    case Arm::L:
      return "L";
    case Arm::D:
      return "D";
  }
  return "?";
}

Vec2 arm_direction(Arm arm) {
  switch (arm) {
    case Arm::R:
      return {1.0, 0.0};
    case Arm::U:
      return {0.0, 1.0};
    case Arm::L:
      return {-1.0, 0.0};
    case Arm::D:
      return {0.0, -1.0};
  }
  return {};
}

JunctionParams JunctionParams::with_linear_rails(double h) {
  const auto dims = linear_rf_dimensions(h);
  JunctionParams p;
  p.h = h;
  p.gap_width = dims.gap_width;
  p.rf_width = dims.rf_width;
  p.with_extended_arms();
  return p;
}

JunctionParams JunctionParams::reference(double h) {
  JunctionParams p = with_linear_rails(h);
  p.set_normalized({0.07460, 0.29428, 0.54857, 2.46382, 1.03774, 1.78611, 2.43434, 4.98629});
  return p;
}

std::array<double, 8> JunctionParams::normalized() const {
  return {d_in / h, x_i2 / h, y_i2 / h, y_i3 / h, d_out / h, x_o2 / h, y_o2 / h, y_o3 / h};
}

void JunctionParams::set_normalized(const std::array<double, 8>& v) {
  d_in = v[0] * h;
  x_i2 = v[1] * h;
  y_i2 = v[2] * h;
  y_i3 = v[3] * h;
  d_out = v[4] * h;
  x_o2 = v[5] * h;
  y_o2 = v[6] * h;
  y_o3 = v[7] * h;
}

JunctionParams& JunctionParams::with_final_arms() {
  arm_length = {750.0, 750.0, 750.0, 2700.0};
  return *this;
}

JunctionParams& JunctionParams::with_extended_arms(double factor) {
  arm_length.fill(factor * h);
  return *this;
}

SplineBoundary JunctionParams::inner_spline() const {
  const double a = gap_width / 2.0;
  return SplineBoundary({Vec2{y_i3, a}, Vec2{y_i2, x_i2}, Vec2{d_in, d_in}, Vec2{x_i2, y_i2},
                         Vec2{a, y_i3}});
}

SplineBoundary JunctionParams::outer_spline() const {
  const double b = gap_width / 2.0 + rf_width;
  return SplineBoundary({Vec2{y_o3, b}, Vec2{y_o2, x_o2}, Vec2{d_out, d_out}, Vec2{x_o2, y_o2},
                         Vec2{b, y_o3}});
}

void JunctionParams::validate() const {
  require_positive(h, "h");
  require_positive(d_in, "d_in");
  require_positive(x_i2, "x_i2");
  require_positive(y_i2, "y_i2");
  require_positive(y_i3, "y_i3");
  require_positive(d_out, "d_out");
  require_positive(x_o2, "x_o2");
  require_positive(y_o2, "y_o2");
  require_positive(y_o3, "y_o3");
  require_positive(gap_width, "w_g");
  require_positive(rf_width, "w_RF");
  for (Arm arm : kArms) require_positive(arm_len(*this, arm), "arm length");
  if (samples_per_spline < 3) throw GeometryError("at least three spline samples are required");
  if (d_out <= d_in) throw GeometryError("outer spline vertex d_out must exceed d_in");
  const double b = gap_width / 2.0 + rf_width;
  const double reach = std::max({y_i3, y_o3, b});
  for (Arm arm : kArms)
    if (arm_len(*this, arm) <= reach)
      throw GeometryError("arm " + std::string(arm_name(arm)) +
                          " is shorter than the spline region");
  const auto inner = inner_spline().sample(samples_per_spline);
  const auto outer = outer_spline().sample(samples_per_spline);
  for (const auto* line : {&inner, &outer})
    for (Vec2 p : *line)
      if (!(p.x > 0.0 && p.y > 0.0))
        throw GeometryError("junction quadrant q1: spline leaves the quadrant");
  if (!is_simple_polyline(inner))
    throw GeometryError("junction quadrant q1: inner spline self-intersects");
  if (!is_simple_polyline(outer))
    throw GeometryError("junction quadrant q1: outer spline self-intersects");
  for (const Quadrant& q : kQuadrants) {
    const auto ring = canonical_rf_ring(*this, inner, outer, arm_len(*this, q.horizontal),
                                        arm_len(*this, q.vertical));
    if (!is_simple_ring(ring))
      throw GeometryError(std::string("junction quadrant ") + q.name +
                          ": RF boundary self-intersects");
  }
}

nlohmann::json JunctionParams::to_json() const {
  nlohmann::json j = {{"h", h},           {"w_g", gap_width},
                      {"w_RF", rf_width}, {"samples_per_spline", samples_per_spline}};
  const auto v = normalized();
  for (std::size_t i = 0; i < v.size(); ++i) j[kJunctionVariableNames[i]] = v[i] * h;
  j["arm_length"] = {{"R", arm_length[0]}, {"U", arm_length[1]}, {"L", arm_length[2]},
                     {"D", arm_length[3]}};
  return j;
}

JunctionParams JunctionParams::from_json(const nlohmann::json& j) {
  JunctionParams p;
  try {
    p.h = j.at("h").get<double>();
    p.gap_width = j.at("w_g").get<double>();
    p.rf_width = j.at("w_RF").get<double>();
    p.samples_per_spline = j.value("samples_per_spline", 21);
    std::array<double, 8> v{};
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = j.at(kJunctionVariableNames[i]).get<double>() / p.h;
    p.set_normalized(v);
    const auto& arms = j.at("arm_length");
    for (Arm arm : kArms)
      p.arm_length[static_cast<int>(arm)] = arms.at(std::string(arm_name(arm))).get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw GeometryError(std::string("malformed junction parameters: ") + ex.what());
  }
  return p;
}

std::vector<Polygon> junction_rf_polygons(const JunctionParams& p) {
  p.validate();
  const auto inner = p.inner_spline().sample(p.samples_per_spline);
  const auto outer = p.outer_spline().sample(p.samples_per_spline);
  std::vector<Polygon> out;
  out.reserve(4);
  for (const Quadrant& q : kQuadrants) {
    const auto ring =
        canonical_rf_ring(p, inner, outer, arm_len(p, q.horizontal), arm_len(p, q.vertical));
    out.emplace_back(mapped(ring, q.sx, q.sy));
  }
  return out;
}

ElectrodeLayout build_junction(const JunctionParams& p) {
  ElectrodeLayout layout;
  layout.add({"rf", ElectrodeRole::rf, junction_rf_polygons(p)});

  const double a = p.gap_width / 2.0, b = a + p.rf_width;
  const auto inner = p.inner_spline().sample(p.samples_per_spline);
  const auto outer = p.outer_spline().sample(p.samples_per_spline);
  const double lr = arm_len(p, Arm::R), lu = arm_len(p, Arm::U);
  const double ll = arm_len(p, Arm::L), ld = arm_len(p, Arm::D);

  // Cross-shaped middle island, traversed counterclockwise.
  std::vector<Vec2> cross_ring = {{lr, -a}, {lr, a}};
  auto append = [&](std::vector<Vec2> pts, bool reverse) {
    if (reverse) std::reverse(pts.begin(), pts.end());
    cross_ring.insert(cross_ring.end(), pts.begin(), pts.end());
  };
  append(mapped(inner, 1, 1), false);
  cross_ring.push_back({a, lu});
  cross_ring.push_back({-a, lu});
  append(mapped(inner, -1, 1), true);
  cross_ring.push_back({-ll, a});
  cross_ring.push_back({-ll, -a});
  append(mapped(inner, -1, -1), false);
  cross_ring.push_back({-a, -ld});
  cross_ring.push_back({a, -ld});
  append(mapped(inner, 1, -1), true);
  layout.add({"middle", ElectrodeRole::ground, {Polygon(std::move(cross_ring))}});

  for (const Quadrant& q : kQuadrants) {
    const double lx = arm_len(p, q.horizontal), ly = arm_len(p, q.vertical);
    std::vector<Vec2> ring = {{lx, b}, {lx, ly}, {b, ly}};
    ring.insert(ring.end(), outer.rbegin(), outer.rend());
    layout.add({std::string("outer_") + q.name, ElectrodeRole::control,
                {Polygon(mapped(ring, q.sx, q.sy))}});
  }

  layout.params = p.to_json();
  layout.params["kind"] = "junction";
  return layout;
}

ElectrodeLayout build_linear_fivewire(double h, double half_length,
                                      std::optional<double> outer_extent) {
  const auto dims = linear_rf_dimensions(h);
  if (!(half_length >= 10.0 * h)) throw GeometryError("arm half length must be at least 10 h");
  const double a = dims.inner_edge(), b = dims.outer_edge();
  const double y_max = outer_extent.value_or(half_length);
  if (!(y_max > b)) throw GeometryError("outer extent must exceed the RF outer edge");
  const double L = half_length;
  auto rect = [](double x0, double y0, double x1, double y1) {
    return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
  };
  ElectrodeLayout layout;
  layout.add({"rf", ElectrodeRole::rf, {rect(-L, a, L, b), rect(-L, -b, L, -a)}});
  layout.add({"middle", ElectrodeRole::control, {rect(-L, -a, L, a)}});
  layout.add({"outer_U", ElectrodeRole::control, {rect(-L, b, L, y_max)}});
  layout.add({"outer_D", ElectrodeRole::control, {rect(-L, -y_max, L, -b)}});
  layout.params = {{"kind", "linear"},           {"h", h},
                   {"w_g", dims.gap_width},      {"w_RF", dims.rf_width},
                   {"arm_half_length", L},       {"outer_extent", y_max}};
  return layout;
}

ElectrodeLayout build_naive_junction(double h, double half_length) {
  const auto dims = linear_rf_dimensions(h);
  if (!(half_length >= 10.0 * h)) throw GeometryError("arm half length must be at least 10 h");
  const double a = dims.inner_edge(), b = dims.outer_edge(), L = half_length;

  // L-shaped RF corner piece and square outer region in the first quadrant.
  const std::vector<Vec2> rf_q1 = {{a, a}, {L, a}, {L, b}, {b, b}, {b, L}, {a, L}};
  const std::vector<Vec2> outer_q1 = {{b, b}, {L, b}, {L, L}, {b, L}};

  ElectrodeLayout layout;
  std::vector<Polygon> rf;
  for (const Quadrant& q : kQuadrants) rf.emplace_back(mapped(rf_q1, q.sx, q.sy));
  layout.add({"rf", ElectrodeRole::rf, std::move(rf)});
  layout.add({"middle",
              ElectrodeRole::ground,
              {Polygon({{L, -a},
                        {L, a},
                        {a, a},
                        {a, L},
                        {-a, L},
                        {-a, a},
                        {-L, a},
                        {-L, -a},
                        {-a, -a},
                        {-a, -L},
                        {a, -L},
                        {a, -a}})}});
  for (const Quadrant& q : kQuadrants)
    layout.add({std::string("outer_") + q.name, ElectrodeRole::control,
                {Polygon(mapped(outer_q1, q.sx, q.sy))}});
  layout.params = {{"kind", "naive"},       {"h", h},
                   {"w_g", dims.gap_width}, {"w_RF", dims.rf_width},
                   {"arm_half_length", L},  {"arm_length", {{"R", L}, {"U", L}, {"L", L}, {"D", L}}}};
  return layout;
}

}  // namespace xjunction
