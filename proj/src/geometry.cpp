#include "xjunction/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace xjunction {

namespace {

// Relative tolerance for orientation tests, scaled by the segment lengths.
constexpr double kOrientEps = 1e-12;

double orient(Vec2 a, Vec2 b, Vec2 c) { return cross(b - a, c - a); }

int orient_sign(Vec2 a, Vec2 b, Vec2 c) {
  const double v = orient(a, b, c);
  const double scale = norm(b - a) * norm(c - a);
  if (std::abs(v) <= kOrientEps * scale) return 0;
  return v > 0.0 ? 1 : -1;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

// Side of c relative to line ab, zero within distance eps.
int side_of(Vec2 a, Vec2 b, Vec2 c, double eps) {
  const double v = orient(a, b, c);
  if (std::abs(v) <= eps * norm(b - a)) return 0;
  return v > 0.0 ? 1 : -1;
}

// Crossing of the open segment interiors by more than eps, excluding touching
// and collinear overlap.
bool segments_cross_properly(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2, double eps) {
  return side_of(p1, p2, q1, eps) * side_of(p1, p2, q2, eps) < 0 &&
         side_of(q1, q2, p1, eps) * side_of(q1, q2, p2, eps) < 0;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

double boundary_distance(const Polygon& poly, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i)
    best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  return best;
}

bool boxes_overlap(const Box2& a, const Box2& b) {
  return a.lo.x < b.hi.x && b.lo.x < a.hi.x && a.lo.y < b.hi.y && b.lo.y < a.hi.y;
}

// True if some point of `a` lies strictly inside `b` (beyond `eps` of its boundary).
bool pokes_into(const Polygon& a, const Polygon& b, double eps) {
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = a[i];
    const Vec2 m = 0.5 * (a[i] + a[(i + 1) % n]);
    for (Vec2 q : {p, m})
      if (b.contains(q) && boundary_distance(b, q) > eps) return true;
  }
  return false;
}

bool interiors_overlap(const Polygon& a, const Polygon& b) {
  if (!boxes_overlap(a.bounds(), b.bounds())) return false;
  const Box2 bb = a.bounds();
  const double eps = 1e-9 * std::max({1.0, bb.hi.x - bb.lo.x, bb.hi.y - bb.lo.y});
  const std::size_t na = a.size(), nb = b.size();
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      if (segments_cross_properly(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb], eps))
        return true;
  return pokes_into(a, b, eps) || pokes_into(b, a, eps);
}

std::vector<Vec2> dedupe(std::vector<Vec2> v) {
  std::vector<Vec2> out;
  out.reserve(v.size());
  for (const Vec2& p : v)
    if (out.empty() || !(out.back() == p)) out.push_back(p);
  while (out.size() > 1 && out.front() == out.back()) out.pop_back();
  return out;
}

double ring_signed_area(std::span<const Vec2> v) {
  double a = 0.0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) a += cross(v[i], v[(i + 1) % n]);
  return 0.5 * a;
}

}  // namespace

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const int o1 = orient_sign(p1, p2, q1);
  const int o2 = orient_sign(p1, p2, q2);
  const int o3 = orient_sign(q1, q2, p1);
  const int o4 = orient_sign(q1, q2, p2);
  if (o1 * o2 < 0 && o3 * o4 < 0) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

bool is_simple_polyline(std::span<const Vec2> v) {
  const std::size_t n = v.size();
  if (n < 2) return true;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (v[i] == v[i + 1]) return false;
    // folding back onto the previous segment
    if (i + 2 < n && orient_sign(v[i], v[i + 1], v[i + 2]) == 0 &&
        dot(v[i + 1] - v[i], v[i + 2] - v[i + 1]) < 0.0)
      return false;
    for (std::size_t j = i + 2; j + 1 < n; ++j)
      if (segments_intersect(v[i], v[i + 1], v[j], v[j + 1])) return false;
  }
  return true;
}

bool is_simple_ring(std::span<const Vec2> v) {
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = v[i], b = v[(i + 1) % n], c = v[(i + 2) % n];
    if (a == b) return false;
    if (orient_sign(a, b, c) == 0 && dot(b - a, c - b) < 0.0) return false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // adjacent through the closing edge
      if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

Polygon::Polygon(std::vector<Vec2> vertices) : vertices_(dedupe(std::move(vertices))) {
  if (vertices_.size() < 3) throw GeometryError("polygon needs at least three distinct vertices");
  for (const Vec2& p : vertices_)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw GeometryError("polygon vertex is not finite");
  const double a = ring_signed_area(vertices_);
  if (!(std::abs(a) > 0.0)) throw GeometryError("polygon has zero area");
  if (a < 0.0) std::reverse(vertices_.begin(), vertices_.end());
  if (!is_simple_ring(vertices_)) throw GeometryError("polygon is self-intersecting");
}

double Polygon::signed_area() const { return ring_signed_area(vertices_); }

Vec2 Polygon::centroid() const {
  double a = 0.0, cx = 0.0, cy = 0.0;
  const std::size_t n = vertices_.size();
  // shift to the first vertex to limit cancellation far from the origin
  const Vec2 o = vertices_.front();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = vertices_[i] - o, q = vertices_[(i + 1) % n] - o;
    const double c = cross(p, q);
    a += c;
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  return o + Vec2{cx / (3.0 * a), cy / (3.0 * a)};
}

Box2 Polygon::bounds() const {
  Box2 b{vertices_.front(), vertices_.front()};
  for (const Vec2& p : vertices_) {
    b.lo.x = std::min(b.lo.x, p.x);
    b.lo.y = std::min(b.lo.y, p.y);
    b.hi.x = std::max(b.hi.x, p.x);
    b.hi.y = std::max(b.hi.y, p.y);
  }
  return b;
}

bool Polygon::contains(Vec2 p) const {
  int winding = 0;
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = vertices_[i], b = vertices_[(i + 1) % n];
    const double o = orient(a, b, p);
    if (o == 0.0 && on_segment(a, b, p)) return false;
    if (a.y <= p.y) {
      if (b.y > p.y && o > 0.0) ++winding;
    } else if (b.y <= p.y && o < 0.0) {
      --winding;
    }
  }
  return winding != 0;
}

Polygon Polygon::mapped(double a, double b, double c, double d) const {
  std::vector<Vec2> out;
  out.reserve(vertices_.size());
  for (const Vec2& p : vertices_) out.push_back({a * p.x + b * p.y, c * p.x + d * p.y});
  return Polygon(std::move(out));
}

Polygon Polygon::translated(Vec2 offset) const {
  std::vector<Vec2> out;
  out.reserve(vertices_.size());
  for (const Vec2& p : vertices_) out.push_back(p + offset);
  return Polygon(std::move(out));
}

std::vector<Vec2> Polygon::canonical_vertices() const {
  auto it = std::min_element(vertices_.begin(), vertices_.end());
  std::vector<Vec2> out(it, vertices_.end());
  out.insert(out.end(), vertices_.begin(), it);
  return out;
}

std::optional<Polygon> clip_to_convex(const Polygon& subject, std::span<const Vec2> clip) {
  std::vector<Vec2> poly(subject.vertices().begin(), subject.vertices().end());
  const std::size_t m = clip.size();
  for (std::size_t k = 0; k < m && !poly.empty(); ++k) {
    const Vec2 a = clip[k], b = clip[(k + 1) % m];
    auto inside = [&](Vec2 p) { return orient(a, b, p) >= 0.0; };
    auto intersect = [&](Vec2 p, Vec2 q) {
      const double dp = orient(a, b, p), dq = orient(a, b, q);
      const double t = dp / (dp - dq);
      return p + t * (q - p);
    };
    std::vector<Vec2> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 cur = poly[i], prev = poly[(i + n - 1) % n];
      const bool ci = inside(cur), pi = inside(prev);
      if (ci) {
        if (!pi) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (pi) {
        out.push_back(intersect(prev, cur));
      }
    }
    poly = dedupe(std::move(out));
  }
  if (poly.size() < 3) return std::nullopt;
  // drop collinear vertices so that slivers collapse cleanly
  std::vector<Vec2> cleaned;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i)
    if (orient_sign(poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]) != 0)
      cleaned.push_back(poly[i]);
  if (cleaned.size() < 3) return std::nullopt;
  const Box2 b = subject.bounds();
  const double scale = std::max(b.hi.x - b.lo.x, b.hi.y - b.lo.y);
  if (std::abs(ring_signed_area(cleaned)) <= 1e-12 * scale * scale) return std::nullopt;
  return Polygon(std::move(cleaned));
}

std::string_view to_string(ElectrodeRole role) {
  switch (role) {
    case ElectrodeRole::rf:
      return "rf";
    case ElectrodeRole::control:
      return "control";
    case ElectrodeRole::ground:
      return "ground";
  }
  return "control";
}

ElectrodeRole role_from_string(std::string_view text) {
  if (text == "rf") return ElectrodeRole::rf;
  if (text == "control") return ElectrodeRole::control;
  if (text == "ground") return ElectrodeRole::ground;
  throw GeometryError("unknown electrode role '" + std::string(text) + "'");
}

double Electrode::area() const {
  double a = 0.0;
  for (const auto& p : polygons) a += p.area();
  return a;
}

Vec2 Electrode::centroid() const {
  double a = 0.0;
  Vec2 c{};
  for (const auto& p : polygons) {
    const double w = p.area();
    c = c + w * p.centroid();
    a += w;
  }
  if (a <= 0.0) throw GeometryError("electrode '" + name + "' has no area");
  return (1.0 / a) * c;
}

void ElectrodeLayout::add(Electrode electrode) {
  if (electrode.name.empty()) throw GeometryError("electrode name must not be empty");
  if (contains(electrode.name))
    throw GeometryError("duplicate electrode name '" + electrode.name + "'");
  electrodes_.push_back(std::move(electrode));
}

void ElectrodeLayout::replace(Electrode electrode) {
  for (auto& e : electrodes_) {
    if (e.name == electrode.name) {
      e = std::move(electrode);
      return;
    }
  }
  add(std::move(electrode));
}

void ElectrodeLayout::remove(std::string_view name) {
  std::erase_if(electrodes_, [&](const Electrode& e) { return e.name == name; });
}

bool ElectrodeLayout::contains(std::string_view name) const {
  return std::any_of(electrodes_.begin(), electrodes_.end(),
                     [&](const Electrode& e) { return e.name == name; });
}

const Electrode& ElectrodeLayout::electrode(std::string_view name) const {
  for (const auto& e : electrodes_)
    if (e.name == name) return e;
  throw GeometryError("no electrode named '" + std::string(name) + "'");
}

std::vector<std::string> ElectrodeLayout::names() const {
  std::vector<std::string> out;
  for (const auto& e : electrodes_) out.push_back(e.name);
  return out;
}

std::vector<std::string> ElectrodeLayout::names_with_role(ElectrodeRole role) const {
  std::vector<std::string> out;
  for (const auto& e : electrodes_)
    if (e.role == role) out.push_back(e.name);
  return out;
}

std::vector<const Polygon*> ElectrodeLayout::rf_polygons() const {
  std::vector<const Polygon*> out;
  for (const auto& e : electrodes_)
    if (e.role == ElectrodeRole::rf)
      for (const auto& p : e.polygons) out.push_back(&p);
  return out;
}

void ElectrodeLayout::validate() const {
  struct Item {
    const Electrode* owner;
    const Polygon* poly;
  };
  std::vector<Item> items;
  for (const auto& e : electrodes_) {
    if (e.polygons.empty()) throw GeometryError("electrode '" + e.name + "' has no polygons");
    for (const auto& p : e.polygons) {
      if (p.size() < 3 || !is_simple_ring(p.vertices()))
        throw GeometryError("electrode '" + e.name + "' has an invalid polygon");
      items.push_back({&e, &p});
    }
  }
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j)
      if (interiors_overlap(*items[i].poly, *items[j].poly))
        throw GeometryError("electrodes '" + items[i].owner->name + "' and '" +
                            items[j].owner->name + "' overlap");
}

std::vector<Vec2> offset_gap(std::span<const Vec2> outline, double gap, OffsetSide side,
                             bool closed) {
  if (!(gap >= 0.0)) throw std::invalid_argument("offset gap must be non-negative");
  const std::size_t n = outline.size();
  if (n < 2 || (closed && n < 3)) throw GeometryError("outline too short to offset");
  const double g = side == OffsetSide::left ? gap : -gap;
  const std::size_t nseg = closed ? n : n - 1;
  std::vector<Vec2> normal(nseg);
  for (std::size_t i = 0; i < nseg; ++i) {
    const Vec2 d = outline[(i + 1) % n] - outline[i];
    const double len = norm(d);
    if (len == 0.0) throw GeometryError("outline has repeated vertices");
    normal[i] = Vec2{-d.y / len, d.x / len};
  }
  auto corner = [&](std::size_t prev, std::size_t next, Vec2 p) {
    const Vec2 n0 = normal[prev], n1 = normal[next];
    const double c = 1.0 + dot(n0, n1);
    // miter: offset point lies along the bisector at distance g / cos(half angle)
    if (c < 1e-9) return p + g * n1;
    return p + (g / c) * (n0 + n1);
  };
  std::vector<Vec2> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!closed && i == 0) {
      out[i] = outline[0] + g * normal[0];
    } else if (!closed && i == n - 1) {
      out[i] = outline[i] + g * normal[nseg - 1];
    } else {
      out[i] = corner((i + nseg - 1) % nseg, i % nseg, outline[i]);
    }
  }
  for (std::size_t i = 0; i < nseg; ++i) {
    const Vec2 before = outline[(i + 1) % n] - outline[i];
    const Vec2 after = out[(i + 1) % n] - out[i];
    if (dot(before, after) <= 0.0) throw GeometryError("offset collapses an outline segment");
  }
  const bool simple = closed ? is_simple_ring(out) : is_simple_polyline(out);
  if (!simple) throw GeometryError("offset outline self-intersects");
  return out;
}

std::vector<Vec2> resample_polyline(std::span<const Vec2> v, int count) {
  if (v.size() < 2 || count < 2) throw std::invalid_argument("resample needs two points");
  std::vector<double> s(v.size(), 0.0);
  for (std::size_t i = 1; i < v.size(); ++i) s[i] = s[i - 1] + norm(v[i] - v[i - 1]);
  const double total = s.back();
  std::vector<Vec2> out;
  out.reserve(count);
  std::size_t seg = 0;
  for (int k = 0; k < count; ++k) {
    if (k == count - 1) {
      out.push_back(v.back());
      break;
    }
    const double target = total * k / (count - 1);
    while (seg + 2 < v.size() && s[seg + 1] < target) ++seg;
    const double len = s[seg + 1] - s[seg];
    const double t = len > 0.0 ? (target - s[seg]) / len : 0.0;
    out.push_back(v[seg] + t * (v[seg + 1] - v[seg]));
  }
  return out;
}

nlohmann::json layout_to_json(const ElectrodeLayout& layout) {
  nlohmann::json electrodes = nlohmann::json::array();
  for (const auto& e : layout.electrodes()) {
    nlohmann::json polys = nlohmann::json::array();
    for (const auto& p : e.polygons) {
      nlohmann::json ring = nlohmann::json::array();
      for (const Vec2& v : p.vertices()) ring.push_back({v.x, v.y});
      polys.push_back(std::move(ring));
    }
    electrodes.push_back(
        {{"name", e.name}, {"role", std::string(to_string(e.role))}, {"polygons", polys}});
  }
  return {{"params", layout.params}, {"electrodes", electrodes}};
}

ElectrodeLayout layout_from_json(const nlohmann::json& j) {
  ElectrodeLayout layout;
  try {
    if (j.contains("params")) layout.params = j.at("params");
    for (const auto& je : j.at("electrodes")) {
      Electrode e;
      e.name = je.at("name").get<std::string>();
      e.role = role_from_string(je.at("role").get<std::string>());
      for (const auto& ring : je.at("polygons")) {
        std::vector<Vec2> pts;
        for (const auto& v : ring) pts.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
        e.polygons.emplace_back(std::move(pts));
      }
      layout.add(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw GeometryError(std::string("malformed layout JSON: ") + ex.what());
  }
  return layout;
}

void write_polyline_csv(std::ostream& out, std::span<const Vec2> polyline) {
  out << "x_um,y_um\n";
  out.precision(17);
  for (const Vec2& p : polyline) out << p.x << ',' << p.y << '\n';
}

}  // namespace xjunction
