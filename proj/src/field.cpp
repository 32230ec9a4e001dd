#include "xjunction/field.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>

#include <boost/math/tools/minima.hpp>

namespace xjunction {

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

// Signed solid angle / 2π of the triangle spanned by edge (a, b) and the
// foot point of p. Seen from p at height z, this is the Van Oosterom
// formula with the first vertex directly below p, which avoids the large
// cancellations of a fan anchored at a distant vertex.
double edge_theta(double ax, double ay, double bx, double by, double z) {
  const double ra = std::sqrt(ax * ax + ay * ay + z * z);
  const double rb = std::sqrt(bx * bx + by * by + z * z);
  const double num = ax * by - ay * bx;
  const double den = ra * rb + z * (ra + rb) + ax * bx + ay * by + z * z;
  return std::atan2(num, den) / constants::pi;
}

}  // namespace

void require_above_plane(const Vec3& p) {
  if (!(p.z() > 0.0) || !p.allFinite())
    throw FieldError("field point must lie above the electrode plane (z > 0)");
}

PolygonField::PolygonField(std::span<const Polygon> polygons) {
  for (const auto& poly : polygons) {
    const auto ring = poly.vertices();
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 a = ring[i], b = ring[(i + 1) % n];
      const double len = norm(b - a);
      edges_.push_back({a.x, a.y, (b.x - a.x) / len, (b.y - a.y) / len, len});
    }
  }
}

PolygonField::PolygonField(std::span<const Polygon* const> polygons) {
  std::vector<Polygon> copies;
  for (const Polygon* p : polygons) copies.push_back(*p);
  *this = PolygonField(std::span<const Polygon>(copies));
}

double PolygonField::potential(const Vec3& p) const {
  require_above_plane(p);
  double theta = 0.0;
  for (const Edge& e : edges_) {
    const double ax = e.ax - p.x(), ay = e.ay - p.y();
    theta += edge_theta(ax, ay, ax + e.length * e.ux, ay + e.length * e.uy, p.z());
  }
  return theta;
}

void PolygonField::derivatives(const Vec3& p, Vec3& gradient, Mat3* hessian,
                               double singular_distance) const {
  require_above_plane(p);
  const double px = p.x(), py = p.y(), z = p.z();
  const double z2 = z * z;
  const double min_d2 = singular_distance * singular_distance;
  Vec3 G = Vec3::Zero();
  Mat3 J = Mat3::Zero();
  for (const Edge& e : edges_) {
    const double dx = px - e.ax, dy = py - e.ay;
    const double ex = dx - e.length * e.ux, ey = dy - e.length * e.uy;
    const double t1 = e.ux * dx + e.uy * dy;
    const double t2 = t1 - e.length;
    const double c = e.ux * dy - e.uy * dx;
    const double s = c * c + z2;
    const double dn2 = dx * dx + dy * dy + z2, en2 = ex * ex + ey * ey + z2;
    const double dist2 = (t1 >= 0.0 && t2 <= 0.0) ? s : std::min(dn2, en2);
    if (dist2 < min_d2)
      throw FieldError("field point within " + std::to_string(singular_distance) +
                       " um of an electrode edge");
    const double dn = std::sqrt(dn2), en = std::sqrt(en2);
    double g;
    if (t1 > 0.0 && t2 < 0.0) {
      g = (t1 / dn - t2 / en) / s;
    } else {
      g = e.length * (t1 + t2) / ((t1 * en + t2 * dn) * dn * en);
    }
    const Vec3 v(e.uy * z, -e.ux * z, c);  // u × d
    G += g * v;
    if (hessian) {
      const Vec3 u(e.ux, e.uy, 0.0);
      const Vec3 d(dx, dy, z), ev(ex, ey, z);
      const Vec3 grad_n = (u - (t1 / dn2) * d) / dn - (u - (t2 / en2) * ev) / en;
      const Vec3 grad_s = 2.0 * (d - t1 * u);
      const Vec3 grad_g = (grad_n - g * grad_s) / s;
      Mat3 ux;
      ux << 0.0, 0.0, e.uy, 0.0, 0.0, -e.ux, -e.uy, e.ux, 0.0;
      J += g * ux + v * grad_g.transpose();
    }
  }
  gradient = -G / kTwoPi;
  if (hessian) {
    const Mat3 H = -J / kTwoPi;
    *hessian = 0.5 * (H + H.transpose());
  }
}

FieldSample PolygonField::sample(const Vec3& p, bool with_third, const FieldOptions& opt) const {
  FieldSample s;
  s.theta = potential(p);
  derivatives(p, s.gradient, &s.hessian, opt.singular_distance);
  if (with_third) {
    const double h = opt.third_derivative_step;
    if (!(p.z() > h)) throw FieldError("point too close to the plane for third derivatives");
    std::array<Mat3, 3> d;
    for (int k = 0; k < 3; ++k) {
      Vec3 step = Vec3::Zero();
      step[k] = h;
      Vec3 gp, gm;
      Mat3 hp, hm;
      derivatives(p + step, gp, &hp, opt.singular_distance);
      derivatives(p - step, gm, &hm, opt.singular_distance);
      d[k] = (hp - hm) / (2.0 * h);
    }
    Tensor3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          t[k](i, j) =
              (d[k](i, j) + d[k](j, i) + d[i](k, j) + d[i](j, k) + d[j](i, k) + d[j](k, i)) / 6.0;
    s.third = t;
  }
  return s;
}

FieldModel::FieldModel(const ElectrodeLayout& layout, FieldOptions options)
    : options_(options) {
  for (const auto& e : layout.electrodes()) {
    names_.push_back(e.name);
    electrodes_.emplace_back(std::span<const Polygon>(e.polygons));
  }
  const auto rf = layout.rf_polygons();
  rf_ = PolygonField(std::span<const Polygon* const>(rf));
}

std::size_t FieldModel::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw FieldError("unknown electrode '" + std::string(name) + "'");
}

FieldSample FieldModel::basis(std::size_t index, const Vec3& p, bool with_third) const {
  return electrodes_.at(index).sample(p, with_third, options_);
}

FieldSample FieldModel::basis(std::string_view name, const Vec3& p, bool with_third) const {
  return basis(index_of(name), p, with_third);
}

double FieldModel::basis_potential(std::string_view name, const Vec3& p) const {
  return electrodes_.at(index_of(name)).potential(p);
}

double FieldModel::basis_potential(std::size_t index, const Vec3& p) const {
  return electrodes_.at(index).potential(p);
}

Vec3 FieldModel::basis_gradient(std::size_t index, const Vec3& p) const {
  Vec3 g;
  electrodes_.at(index).derivatives(p, g, nullptr, options_.singular_distance);
  return g;
}

FieldSample FieldModel::rf(const Vec3& p, bool with_third) const {
  if (rf_.empty()) throw FieldError("layout has no RF electrodes");
  return rf_.sample(p, with_third, options_);
}

Vec3 FieldModel::rf_gradient(const Vec3& p) const {
  if (rf_.empty()) throw FieldError("layout has no RF electrodes");
  Vec3 g;
  rf_.derivatives(p, g, nullptr, options_.singular_distance);
  return g;
}

double FieldModel::pseudo_phi(const PhysicalContext& ctx, const Vec3& p) const {
  return ctx.pseudo_prefactor() * rf_gradient(p).squaredNorm();
}

PseudoSample FieldModel::pseudo(const PhysicalContext& ctx, const Vec3& p,
                                bool with_hessian) const {
  if (rf_.empty()) throw FieldError("layout has no RF electrodes");
  if (with_hessian) return pseudo_from_rf(rf_.sample(p, true, options_), ctx);
  FieldSample s;
  rf_.derivatives(p, s.gradient, &s.hessian, options_.singular_distance);
  return pseudo_from_rf(s, ctx);
}

StaticSample FieldModel::composite(const std::map<std::string, double>& voltages,
                                   const Vec3& p) const {
  StaticSample out;
  for (const auto& [name, volts] : voltages) {
    const std::size_t i = index_of(name);
    if (volts == 0.0) continue;
    const FieldSample s = basis(i, p);
    const double scale = 1.0e3 * volts;  // V -> meV per charge
    out.potential += scale * s.theta;
    out.gradient += scale * s.gradient;
    out.hessian += scale * s.hessian;
  }
  return out;
}

PseudoSample pseudo_from_rf(const FieldSample& rf, const PhysicalContext& ctx) {
  const double pref = ctx.pseudo_prefactor();
  const Vec3& g = rf.gradient;
  const Mat3& H = rf.hessian;
  PseudoSample s;
  s.phi = pref * g.squaredNorm();
  s.gradient = 2.0 * pref * (H * g);
  s.laplacian = 2.0 * pref * H.squaredNorm();
  if (rf.third) {
    Mat3 t = Mat3::Zero();
    for (int k = 0; k < 3; ++k) t += g[k] * (*rf.third)[k];
    const Mat3 hp = 2.0 * pref * (H * H + t);
    s.hessian = 0.5 * (hp + hp.transpose());
  }
  s.rf_field = -ctx.rf_peak_voltage * 1.0e6 * g;
  return s;
}

FieldSample basis_potential(const ElectrodeLayout& layout, std::string_view electrode,
                            const Vec3& p) {
  const auto& e = layout.electrode(electrode);
  FieldSample s;
  s.theta = PolygonField(std::span<const Polygon>(e.polygons)).potential(p);
  return s;
}

FieldSample basis_field(const ElectrodeLayout& layout, std::string_view electrode,
                        const Vec3& p, bool with_third, const FieldOptions& opt) {
  const auto& e = layout.electrode(electrode);
  return PolygonField(std::span<const Polygon>(e.polygons)).sample(p, with_third, opt);
}

PseudoSample pseudopotential(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                             const Vec3& p, bool with_hessian) {
  return FieldModel(layout).pseudo(ctx, p, with_hessian);
}

StaticSample composite_static_field(const ElectrodeLayout& layout,
                                    const std::map<std::string, double>& voltages,
                                    const Vec3& p) {
  for (const auto& [name, v] : voltages)
    if (!layout.contains(name)) throw FieldError("unknown electrode '" + name + "'");
  return FieldModel(layout).composite(voltages, p);
}

int SecularModes::unstable_count() const {
  return static_cast<int>(std::count_if(frequency_mhz.begin(), frequency_mhz.end(),
                                        [](const auto& f) { return !f.has_value(); }));
}

SecularModes secular_frequencies(const Mat3& hessian, const PhysicalContext& ctx) {
  const Mat3 sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  SecularModes m;
  m.eigenvalues = solver.eigenvalues();
  m.axes = solver.eigenvectors();
  for (int i = 0; i < 3; ++i)
    if (m.eigenvalues[i] > 0.0) m.frequency_mhz[i] = ctx.frequency_mhz(m.eigenvalues[i]);
  return m;
}

namespace strip2d {

namespace {

using cplx = std::complex<double>;

struct Complex {
  cplx f;    // potential function whose imaginary part is Θ
  cplx df;
  cplx d2f;
};

Complex strip_complex(double a, double b, cplx w) {
  const cplx wa = w - a, wb = w - b;
  Complex c;
  c.f = (std::log(wb) - std::log(wa)) / constants::pi;
  c.df = (1.0 / wb - 1.0 / wa) / constants::pi;
  c.d2f = (1.0 / (wa * wa) - 1.0 / (wb * wb)) / constants::pi;
  return c;
}

Sample to_sample(const Complex& c) {
  Sample s;
  s.theta = c.f.imag();
  // Cauchy–Riemann: Θ_y = Im F', Θ_z = Re F'
  s.gradient = Eigen::Vector2d(c.df.imag(), c.df.real());
  s.grad_squared = std::norm(c.df);
  s.grad_squared_laplacian = 4.0 * std::norm(c.d2f);
  return s;
}

}  // namespace

Sample strip(double a, double b, double y, double z) {
  if (!(z > 0.0)) throw FieldError("strip evaluation needs z > 0");
  return to_sample(strip_complex(a, b, cplx(y, z)));
}

Sample rail_pair(double a, double b, double y, double z) {
  if (!(z > 0.0)) throw FieldError("strip evaluation needs z > 0");
  const cplx w(y, z);
  const Complex p = strip_complex(a, b, w), m = strip_complex(-b, -a, w);
  return to_sample({p.f + m.f, p.df + m.df, p.d2f + m.d2f});
}

double null_height(double a, double b) { return std::sqrt(a * b); }

}  // namespace strip2d

LinearRfOptimum optimize_linear_rf(double h, const PhysicalContext& ctx, double grid_step) {
  if (!(h > 0.0)) throw std::invalid_argument("ion height must be positive");
  if (!(grid_step > 0.0 && grid_step < 1.0)) throw std::invalid_argument("bad grid step");
  const double pref = ctx.pseudo_prefactor();
  auto curvature = [&](double a) {
    const double b = h * h / a;
    return pref * strip2d::rail_pair(a, b, 0.0, h).grad_squared_laplacian;
  };
  LinearRfOptimum out;
  double best = -1.0;
  for (int k = 1;; ++k) {
    const double wg = k * grid_step * h;
    if (wg >= 2.0 * h) break;
    const double c = curvature(wg / 2.0);
    if (c > best) {
      best = c;
      out.grid_gap_width = wg;
    }
  }
  const double a_grid = out.grid_gap_width / 2.0;
  out.grid_rf_width = h * h / a_grid - a_grid;
  out.curvature = best;

  const auto [a_opt, neg] = boost::math::tools::brent_find_minima(
      [&](double a) { return -curvature(a); }, std::max(1e-6 * h, a_grid - grid_step * h),
      std::min(h * (1.0 - 1e-9), a_grid + grid_step * h), 50);
  out.continuous_gap_width = 2.0 * a_opt;
  out.continuous_rf_width = h * h / a_opt - a_opt;
  return out;
}

void write_grid_csv(std::ostream& out, const FieldModel& model, const PhysicalContext& ctx,
                    std::span<const Vec3> points, GridQuantity quantity,
                    std::string_view electrode) {
  out.precision(12);
  if (quantity == GridQuantity::theta) {
    const std::size_t idx = model.index_of(electrode);
    out << "x,y,z,theta\n";
    for (const Vec3& p : points) {
      const double th = model.basis(idx, p).theta;
      out << p.x() << ',' << p.y() << ',' << p.z() << ',' << th << '\n';
    }
  } else {
    out << "x,y,z,phi_pp,laplacian\n";
    for (const Vec3& p : points) {
      const auto s = model.pseudo(ctx, p);
      out << p.x() << ',' << p.y() << ',' << p.z() << ',' << s.phi << ',' << s.laplacian << '\n';
    }
  }
}

}  // namespace xjunction
