#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "xjunction/geometry.hpp"

namespace xjunction {

namespace {

std::vector<Vec2> rect_ring(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

// Convex region {s0 <= s <= s1, |t| <= s} along an arm, as a CCW ring.
std::vector<Vec2> arm_wedge(Arm arm, double s0, double s1) {
  const Vec2 d = arm_direction(arm);
  const Vec2 n{-d.y, d.x};
  return {s0 * d - s0 * n, s1 * d - s1 * n, s1 * d + s1 * n, s0 * d + s0 * n};
}

std::vector<Polygon> clip_all(std::span<const Polygon> polys, std::span<const Vec2> region) {
  std::vector<Polygon> out;
  for (const auto& p : polys)
    if (auto c = clip_to_convex(p, region)) out.push_back(std::move(*c));
  return out;
}

double layout_extent(const ElectrodeLayout& layout) {
  double m = 1.0;
  for (const auto& e : layout.electrodes())
    for (const auto& p : e.polygons) {
      const Box2 b = p.bounds();
      m = std::max({m, std::abs(b.lo.x), std::abs(b.lo.y), std::abs(b.hi.x), std::abs(b.hi.y)});
    }
  return 4.0 * m;
}

double available_length(const ElectrodeLayout& layout, Arm arm) {
  const auto& params = layout.params;
  const std::string kind = params.value("kind", "");
  if (kind == "linear") {
    if (arm == Arm::U || arm == Arm::D) return 0.0;
    return params.at("arm_half_length").get<double>();
  }
  if (params.contains("arm_length"))
    return params.at("arm_length").at(std::string(arm_name(arm))).get<double>();
  throw GeometryError("layout does not record its arm lengths");
}

void push_nonempty(std::vector<Electrode>& out, std::string name, ElectrodeRole role,
                   std::vector<Polygon> polys) {
  if (!polys.empty()) out.push_back({std::move(name), role, std::move(polys)});
}

}  // namespace

SegmentationPlan SegmentationPlan::reference() {
  SegmentationPlan plan;
  plan.segments_per_arm = {9, 9, 9, 20};
  plan.split_outer = true;
  return plan;
}

SegmentationPlan SegmentationPlan::linear(int per_side, bool split_outer) {
  SegmentationPlan plan;
  plan.center_size = 75.0;
  plan.first_length = 75.0;
  plan.segment_length = 75.0;
  plan.segments_per_arm = {per_side, 0, per_side, 0};
  plan.split_outer = split_outer;
  return plan;
}

bool SegmentationPlan::empty() const {
  return !split_outer &&
         std::all_of(segments_per_arm.begin(), segments_per_arm.end(), [](int n) { return n == 0; });
}

ElectrodeLayout segment_controls(const ElectrodeLayout& layout, const SegmentationPlan& plan) {
  if (plan.empty()) return layout;
  for (int n : plan.segments_per_arm)
    if (n < 0) throw GeometryError("segment counts must be non-negative");
  if (!(plan.center_size > 0.0 && plan.first_length > 0.0 && plan.segment_length > 0.0 &&
        plan.outer_thin_width > 0.0 && plan.outer_wide_width > 0.0))
    throw GeometryError("segmentation lengths must be positive");

  const std::string kind = layout.params.value("kind", "");
  if (kind != "linear" && kind != "junction" && kind != "naive")
    throw GeometryError("segment_controls needs a layout from one of the builders");
  const double big = layout_extent(layout);
  const double half = plan.center_size / 2.0;

  ElectrodeLayout out = layout;
  const int total_segments =
      std::accumulate(plan.segments_per_arm.begin(), plan.segments_per_arm.end(), 0);

  if (total_segments > 0) {
    const auto& middle = layout.electrode("middle").polygons;
    std::vector<Electrode> pieces;
    push_nonempty(pieces, "c", ElectrodeRole::control,
                  clip_all(middle, rect_ring(-half, -half, half, half)));
    std::vector<Polygon> rest;
    for (Arm arm : kArms) {
      const int n = plan.segments_per_arm[static_cast<int>(arm)];
      double s = half;
      const double s_end = n == 0 ? half : half + plan.first_length + (n - 1) * plan.segment_length;
      if (n > 0 && s_end > available_length(layout, arm) + 1e-9)
        throw GeometryError("segmentation plan exceeds the length of arm " +
                            std::string(arm_name(arm)));
      for (int k = 1; k <= n; ++k) {
        const double next = s + (k == 1 ? plan.first_length : plan.segment_length);
        auto polys = clip_all(middle, arm_wedge(arm, s, next));
        if (polys.empty())
          throw GeometryError("segment " + std::string(arm_name(arm)) + std::to_string(k) +
                              " does not overlap the middle electrode");
        pieces.push_back({std::string(arm_name(arm)) + std::to_string(k), ElectrodeRole::control,
                          std::move(polys)});
        s = next;
      }
      for (auto& p : clip_all(middle, arm_wedge(arm, s, big))) rest.push_back(std::move(p));
    }
    out.remove("middle");
    push_nonempty(pieces, "middle", ElectrodeRole::ground, std::move(rest));
    for (auto& e : pieces) out.add(std::move(e));
  }

  if (plan.split_outer) {
    const double b = layout.params.at("w_g").get<double>() / 2.0 +
                     layout.params.at("w_RF").get<double>();
    const double t_thin = b + plan.outer_thin_width;
    const double t_wide = t_thin + plan.outer_wide_width;
    std::vector<Electrode> pieces;
    std::vector<Polygon> rest;
    if (kind == "linear") {
      for (const char* side : {"U", "D"}) {
        const double sy = side[0] == 'U' ? 1.0 : -1.0;
        const auto& polys = layout.electrode(std::string("outer_") + side).polygons;
        auto band = [&](double t0, double t1) {
          return sy > 0 ? rect_ring(-big, t0, big, t1) : rect_ring(-big, -t1, big, -t0);
        };
        push_nonempty(pieces, std::string("thin_") + side, ElectrodeRole::control,
                      clip_all(polys, band(0.0, t_thin)));
        push_nonempty(pieces, std::string("wide_") + side, ElectrodeRole::control,
                      clip_all(polys, band(t_thin, t_wide)));
        for (auto& p : clip_all(polys, band(t_wide, big))) rest.push_back(std::move(p));
        out.remove(std::string("outer_") + side);
      }
    } else {
      struct Q {
        const char* name;
        double sx, sy;
        Arm horizontal, vertical;
      };
      const std::array<Q, 4> quadrants = {{{"q1", 1, 1, Arm::R, Arm::U},
                                           {"q2", -1, 1, Arm::L, Arm::U},
                                           {"q3", -1, -1, Arm::L, Arm::D},
                                           {"q4", 1, -1, Arm::R, Arm::D}}};
      for (const Q& q : quadrants) {
        const auto& polys = layout.electrode(std::string("outer_") + q.name).polygons;
        auto band = [&](bool along_x, double t0, double t1) {
          // canonical first-quadrant half {x >= y} (or its mirror), t0 <= y <= t1
          std::vector<Vec2> ring = {{t0, t0}, {big, t0}, {big, t1}, {t1, t1}};
          for (auto& v : ring) {
            if (!along_x) v = {v.y, v.x};
            v = {q.sx * v.x, q.sy * v.y};
          }
          if (q.sx * q.sy * (along_x ? 1.0 : -1.0) < 0.0) std::reverse(ring.begin(), ring.end());
          return ring;
        };
        for (bool along_x : {true, false}) {
          const Arm arm = along_x ? q.horizontal : q.vertical;
          const Arm side = along_x ? q.vertical : q.horizontal;
          const std::string stem = std::string(arm_name(arm));
          const std::string suffix = "_" + std::string(arm_name(side));
          push_nonempty(pieces, stem + "_thin" + suffix, ElectrodeRole::control,
                        clip_all(polys, band(along_x, 0.0, t_thin)));
          push_nonempty(pieces, stem + "_wide" + suffix, ElectrodeRole::control,
                        clip_all(polys, band(along_x, t_thin, t_wide)));
          for (auto& p : clip_all(polys, band(along_x, t_wide, big))) rest.push_back(std::move(p));
        }
        out.remove(std::string("outer_") + q.name);
      }
    }
    push_nonempty(pieces, "outer_rest", ElectrodeRole::ground, std::move(rest));
    for (auto& e : pieces) out.add(std::move(e));
  }

  nlohmann::json seg = {{"center_size", plan.center_size},
                        {"first_length", plan.first_length},
                        {"segment_length", plan.segment_length},
                        {"segments_per_arm", plan.segments_per_arm},
                        {"split_outer", plan.split_outer}};
  out.params["segmentation"] = seg;
  return out;
}

}  // namespace xjunction
