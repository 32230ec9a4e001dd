#pragma once

#include <array>
#include <cmath>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace xjunction {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2 a, Vec2 b) = default;
  friend constexpr auto operator<=>(Vec2 a, Vec2 b) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

/// Axis-aligned bounding box.
struct Box2 {
  Vec2 lo;
  Vec2 hi;
};

/// Simple polygon in the electrode plane, stored counterclockwise.
///
/// Construction removes repeated consecutive vertices, reorients clockwise
/// input and rejects anything with fewer than three vertices, zero area or
/// self-intersections.
class Polygon {
 public:
  Polygon() = default;
  explicit Polygon(std::vector<Vec2> vertices);

  std::span<const Vec2> vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  const Vec2& operator[](std::size_t i) const { return vertices_[i]; }

  double signed_area() const;
  double area() const { return std::abs(signed_area()); }
  Vec2 centroid() const;
  Box2 bounds() const;

  /// Winding-number containment; points on the boundary count as outside.
  bool contains(Vec2 p) const;

  /// Image under the linear map (x, y) -> (a x + b y, c x + d y).
  Polygon mapped(double a, double b, double c, double d) const;
  Polygon translated(Vec2 offset) const;

  /// Vertex list rotated to start at the lexicographically smallest vertex.
  std::vector<Vec2> canonical_vertices() const;

 private:
  std::vector<Vec2> vertices_;
};

/// True if no two non-adjacent edges of the closed ring intersect.
bool is_simple_ring(std::span<const Vec2> ring);
/// True if no two non-adjacent segments of the open polyline intersect.
bool is_simple_polyline(std::span<const Vec2> polyline);
/// Proper or touching intersection of closed segments [p1,p2] and [q1,q2].
bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2);

/// Sutherland–Hodgman clip of an arbitrary simple polygon against a convex
/// clip region. Returns nullopt when the intersection has no area.
std::optional<Polygon> clip_to_convex(const Polygon& subject, std::span<const Vec2> convex_ccw);

enum class ElectrodeRole { rf, control, ground };

std::string_view to_string(ElectrodeRole role);
ElectrodeRole role_from_string(std::string_view text);

struct Electrode {
  std::string name;
  ElectrodeRole role = ElectrodeRole::control;
  std::vector<Polygon> polygons;

  double area() const;
  Vec2 centroid() const;
};

/// Named planar electrodes in the z = 0 plane.
///
/// The explicit electrodes tile a bounded region of the plane; everything
/// outside is an implicit grounded electrode. Interiors of distinct polygons
/// are disjoint.
class ElectrodeLayout {
 public:
  void add(Electrode electrode);
  /// Replaces the electrode with the same name, or appends it.
  void replace(Electrode electrode);
  void remove(std::string_view name);

  bool contains(std::string_view name) const;
  const Electrode& electrode(std::string_view name) const;
  std::span<const Electrode> electrodes() const { return electrodes_; }
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_role(ElectrodeRole role) const;

  /// Polygons of every electrode with the RF role.
  std::vector<const Polygon*> rf_polygons() const;

  /// Checks polygon simplicity and pairwise interior disjointness.
  /// Throws GeometryError naming the offending electrodes.
  void validate() const;

  nlohmann::json params = nlohmann::json::object();

 private:
  std::vector<Electrode> electrodes_;
};

/// Clamped uniform cubic B-spline through five control points whose
/// control polygon is mirror symmetric about the line y = x.
class SplineBoundary {
 public:
  SplineBoundary(std::array<Vec2, 5> control_points);

  const std::array<Vec2, 5>& control_points() const { return control_; }
  Vec2 evaluate(double t) const;

  /// Samples uniformly in the spline parameter, both endpoints included.
  /// The second half is the exact mirror image of the first so the result
  /// is bitwise symmetric about y = x.
  std::vector<Vec2> sample(int count = 21) const;

 private:
  std::array<Vec2, 5> control_;
};

/// RF rail dimensions of the gapless linear five-wire trap.
struct LinearRfDimensions {
  double gap_width = 0.0;  // w_g, width of the middle control strip
  double rf_width = 0.0;   // w_RF
  double inner_edge() const { return 0.5 * gap_width; }
  double outer_edge() const { return 0.5 * gap_width + rf_width; }
};

/// w_g = 0.83 h and w_RF = 1.99 h. The exact null-at-h width
/// (4 h² - w_g²) / (2 w_g) is 1.9946 h; the rounded value is what the
/// fabricated layout uses and puts the null at 0.999 h.
LinearRfDimensions linear_rf_dimensions(double h);

/// Arm indices, counterclockwise from +x.
enum class Arm { R = 0, U = 1, L = 2, D = 3 };
inline constexpr std::array<Arm, 4> kArms = {Arm::R, Arm::U, Arm::L, Arm::D};
std::string_view arm_name(Arm arm);
/// Unit vector pointing outwards along the arm.
Vec2 arm_direction(Arm arm);

/// The eight independent spline variables of the X-junction RF electrode.
struct JunctionParams {
  double h = 50.0;
  double d_in = 0.0;
  double x_i2 = 0.0;
  double y_i2 = 0.0;
  double y_i3 = 0.0;
  double d_out = 0.0;
  double x_o2 = 0.0;
  double y_o2 = 0.0;
  double y_o3 = 0.0;
  double gap_width = 0.0;  // w_g
  double rf_width = 0.0;   // w_RF
  std::array<double, 4> arm_length{};  // indexed by Arm
  int samples_per_spline = 21;

  /// Optimized geometry of the fabricated trap, scaled to height h, with
  /// arms extended to 1e4 h.
  static JunctionParams reference(double h = 50.0);
  /// Rails from linear_rf_dimensions(h), all variables zero, extended arms.
  static JunctionParams with_linear_rails(double h);

  /// The eight variables divided by h in the order
  /// d_in, x_i2, y_i2, y_i3, d_out, x_o2, y_o2, y_o3.
  std::array<double, 8> normalized() const;
  void set_normalized(const std::array<double, 8>& values);

  /// Three 750 µm arms and one 2700 µm arm along -y.
  JunctionParams& with_final_arms();
  JunctionParams& with_extended_arms(double factor = 1.0e4);

  SplineBoundary inner_spline() const;
  SplineBoundary outer_spline() const;

  /// Throws GeometryError if any length is non-positive or the splines are
  /// inconsistent with the rails.
  void validate() const;

  nlohmann::json to_json() const;
  static JunctionParams from_json(const nlohmann::json& j);
};

inline constexpr std::array<const char*, 8> kJunctionVariableNames = {
    "d_in", "x_i2", "y_i2", "y_i3", "d_out", "x_o2", "y_o2", "y_o3"};

/// Linear trap along x: two RF rails, a middle control strip and two outer
/// control regions, tiling [-L, L] x [-outer_extent, outer_extent].
ElectrodeLayout build_linear_fivewire(double h, double arm_half_length,
                                      std::optional<double> outer_extent = std::nullopt);

/// Spline-parameterized X-junction with full D4 symmetry when all arms have
/// equal length. Electrodes: "rf" (four polygons), "middle" (the central
/// cross-shaped island continuing into the middle strips of each arm) and
/// "outer_q1".."outer_q4".
ElectrodeLayout build_junction(const JunctionParams& params);

/// Two five-wire traps crossed at right angles, RF merged into four
/// quadrant pieces.
ElectrodeLayout build_naive_junction(double h, double arm_half_length);

/// The RF-only part of build_junction, skipping the control regions; used in
/// the optimizer's inner loop. Returns the four quadrant polygons.
std::vector<Polygon> junction_rf_polygons(const JunctionParams& params);

/// How control regions are cut into independently driven segments.
struct SegmentationPlan {
  double center_size = 30.0;     // side of the central square electrode "c"
  double first_length = 40.0;    // segment adjacent to the center
  double segment_length = 75.0;  // all further segments
  std::array<int, 4> segments_per_arm{};  // indexed by Arm, includes the first
  bool split_outer = false;
  double outer_thin_width = 49.75;
  double outer_wide_width = 580.0;

  /// Fabricated-trap plan: 9 middle segments on the short arms, 20 on the
  /// long -y arm, thin/wide outer split.
  static SegmentationPlan reference();
  /// Uniform 75 µm segments for a linear trap, `per_side` on each side of a
  /// 75 µm center segment.
  static SegmentationPlan linear(int per_side, bool split_outer = true);

  bool empty() const;
};

/// Splits the middle and outer control regions of a layout built by one of
/// the builders above. Segment names follow the arm + index scheme ("U3",
/// "c"); outer pieces are named "<arm>_thin_<side>" / "<arm>_wide_<side>".
ElectrodeLayout segment_controls(const ElectrodeLayout& layout, const SegmentationPlan& plan);

enum class OffsetSide { left, right };

/// Parallel offset of a polyline by `gap` (>= 0) to one side of the
/// direction of travel. Interior vertices are the intersections of adjacent
/// offset segments. Throws GeometryError if the result self-intersects.
std::vector<Vec2> offset_gap(std::span<const Vec2> outline, double gap,
                             OffsetSide side = OffsetSide::left, bool closed = false);

/// Uniform resampling of a polyline by arc length.
std::vector<Vec2> resample_polyline(std::span<const Vec2> polyline, int count);

nlohmann::json layout_to_json(const ElectrodeLayout& layout);
ElectrodeLayout layout_from_json(const nlohmann::json& j);
void write_polyline_csv(std::ostream& out, std::span<const Vec2> polyline);

}  // namespace xjunction
