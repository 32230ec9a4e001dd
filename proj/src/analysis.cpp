#include "xjunction/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

namespace xjunction {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

struct Frame {
  Vec3 origin;
  Vec3 axis;
  Vec3 transverse;

  Vec3 at(double s, double t, double z) const {
    Vec3 p = origin + s * axis + t * transverse;
    p.z() = z;
    return p;
  }
};

Frame make_frame(const PathOptions& o) {
  Vec3 a(o.axis.x(), o.axis.y(), 0.0);
  if (a.norm() == 0.0) throw std::invalid_argument("path axis must have an in-plane component");
  a.normalize();
  return {Vec3(o.origin.x(), o.origin.y(), 0.0), a, Vec3::UnitZ().cross(a)};
}

void check_window(const PathOptions& o) {
  if (!(o.h > 0.0) || !(o.window_low > 0.0) || !(o.window_high > o.window_low) ||
      !(o.grid_step > 0.0))
    throw std::invalid_argument("invalid path search window");
}

std::vector<double> window_grid(const PathOptions& o) {
  const double lo = o.window_low * o.h, hi = o.window_high * o.h;
  const int n = std::max(3, static_cast<int>(std::ceil((hi - lo) / (o.grid_step * o.h))) + 1);
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = lo + (hi - lo) * i / (n - 1);
  return z;
}

PathSample make_sample(const FieldModel& model, const PhysicalContext& ctx, double s,
                       const Vec3& p, const Frame& frame, const PathOptions& o) {
  const PseudoSample pp = model.pseudo(ctx, p);
  PathSample out;
  out.s = s;
  out.position = p;
  out.phi = pp.phi;
  out.laplacian = pp.laplacian;
  if (o.with_modes) attach_modes(out, model, ctx, frame.axis, o.axial_frequency_mhz);
  return out;
}

void mark_jump(Path& path, double step) {
  const std::size_t n = path.samples.size();
  if (n < 2) return;
  auto& cur = path.samples[n - 1];
  if ((cur.position - path.samples[n - 2].position).norm() > 2.0 * std::abs(step)) cur.jump = true;
}

// Newton relaxation of the in-plane transverse coordinate and the height.
Vec3 relax_transverse(const FieldModel& model, const PhysicalContext& ctx, const Frame& frame,
                      Vec3 p) {
  for (int it = 0; it < 30; ++it) {
    const PseudoSample pp = model.pseudo(ctx, p, true);
    const Eigen::Vector2d g(frame.transverse.dot(pp.gradient), pp.gradient.z());
    if (g.norm() < 1e-10) break;
    Eigen::Matrix2d H;
    H(0, 0) = frame.transverse.dot(pp.hessian * frame.transverse);
    H(0, 1) = H(1, 0) = frame.transverse.dot(pp.hessian.col(2));
    H(1, 1) = pp.hessian(2, 2);
    const Eigen::Vector2d d = H.ldlt().solve(-g);
    if (!d.allFinite()) break;
    p += d[0] * frame.transverse;
    p.z() += d[1];
  }
  return p;
}

}  // namespace

std::vector<double> AxialRange::values() const {
  if (!(step > 0.0)) throw std::invalid_argument("axial step must be positive");
  std::vector<double> v;
  if (stop < start) return v;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
  v.reserve(n + 1);
  for (long i = 0; i <= n; ++i) v.push_back(start + step * static_cast<double>(i));
  return v;
}

double Path::min_laplacian() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) m = std::min(m, s.laplacian);
  return m;
}

double Path::max_phi() const {
  double m = 0.0;
  for (const auto& s : samples) m = std::max(m, s.phi);
  return m;
}

const PathSample& Path::at_max_phi() const {
  if (samples.empty()) throw AnalysisError("empty path");
  return *std::max_element(samples.begin(), samples.end(),
                           [](const auto& a, const auto& b) { return a.phi < b.phi; });
}

int Path::jump_count() const {
  return static_cast<int>(
      std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.jump; }));
}

Path path_min_pp(const FieldModel& model, const PhysicalContext& ctx, const AxialRange& range,
                 const PathOptions& options) {
  check_window(options);
  const Frame frame = make_frame(options);
  const std::vector<double> zs = window_grid(options);
  Path path;
  std::optional<double> prev_z;
  double t = 0.0;
  for (const double s : range.values()) {
    auto phi = [&](double z) { return model.pseudo_phi(ctx, frame.at(s, t, z)); };
    auto dphi = [&](double z) { return model.pseudo(ctx, frame.at(s, t, z)).gradient.z(); };

    std::vector<double> f(zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) f[i] = phi(zs[i]);
    std::optional<std::size_t> best;
    for (std::size_t i = 1; i + 1 < zs.size(); ++i) {
      if (!(f[i] < f[i - 1] && f[i] <= f[i + 1])) continue;
      if (!best) {
        best = i;
      } else if (prev_z) {
        if (std::abs(zs[i] - *prev_z) < std::abs(zs[*best] - *prev_z)) best = i;
      } else if (f[i] < f[*best]) {
        best = i;
      }
    }
    if (!best)
      throw AnalysisError("no bracketed pseudopotential minimum at s = " + fmt(s) + " um in [" +
                          fmt(zs.front()) + ", " + fmt(zs.back()) + "] um");

    const double lo = zs[*best - 1], hi = zs[*best + 1];
    double z;
    const double dlo = dphi(lo), dhi = dphi(hi);
    if (dlo < 0.0 && dhi > 0.0) {
      std::uintmax_t iters = 200;
      const auto [a, b] = boost::math::tools::toms748_solve(
          dphi, lo, hi, dlo, dhi, boost::math::tools::eps_tolerance<double>(50), iters);
      z = 0.5 * (a + b);
    } else {
      z = boost::math::tools::brent_find_minima(phi, lo, hi, 26).first;
    }
    Vec3 p = frame.at(s, t, z);
    if (options.transverse_2d) {
      p = relax_transverse(model, ctx, frame, p);
      t = (p - frame.at(s, 0.0, p.z())).dot(frame.transverse);
    }
    path.samples.push_back(make_sample(model, ctx, s, p, frame, options));
    mark_jump(path, range.step);
    prev_z = p.z();
  }
  return path;
}

Path path_fixed_height(const FieldModel& model, const PhysicalContext& ctx, double height,
                       const AxialRange& range, const PathOptions& options) {
  require_above_plane(Vec3(0.0, 0.0, height));
  const Frame frame = make_frame(options);
  Path path;
  for (const double s : range.values()) {
    path.samples.push_back(make_sample(model, ctx, s, frame.at(s, 0.0, height), frame, options));
    mark_jump(path, range.step);
  }
  return path;
}

Path path_const_confinement(const FieldModel& model, const PhysicalContext& ctx,
                            double target_laplacian, const AxialRange& range,
                            const PathOptions& options) {
  if (!(target_laplacian > 0.0)) throw std::invalid_argument("target confinement must be positive");
  check_window(options);
  const Frame frame = make_frame(options);
  const std::vector<double> zs = window_grid(options);
  Path path;
  double prev_z = options.h;
  for (const double s : range.values()) {
    auto f = [&](double z) {
      return model.pseudo(ctx, frame.at(s, 0.0, z)).laplacian - target_laplacian;
    };
    std::vector<double> v(zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) v[i] = f(zs[i]);
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i + 1 < zs.size(); ++i) {
      if ((v[i] > 0.0) == (v[i + 1] > 0.0)) continue;
      const double mid = 0.5 * (zs[i] + zs[i + 1]);
      if (!best || std::abs(mid - prev_z) < std::abs(0.5 * (zs[*best] + zs[*best + 1]) - prev_z))
        best = i;
    }
    if (!best) {
      path.complete = false;
      path.diagnostic = "confinement " + fmt(target_laplacian) + " meV/um^2 unreachable at s = " +
                        fmt(s) + " um";
      break;
    }
    const std::size_t i = *best;
    double z;
    if (v[i] == 0.0) {
      z = zs[i];
    } else if (v[i + 1] == 0.0) {
      z = zs[i + 1];
    } else {
      std::uintmax_t iters = 200;
      const auto [a, b] = boost::math::tools::toms748_solve(
          f, zs[i], zs[i + 1], v[i], v[i + 1], boost::math::tools::eps_tolerance<double>(50),
          iters);
      z = 0.5 * (a + b);
    }
    path.samples.push_back(make_sample(model, ctx, s, frame.at(s, 0.0, z), frame, options));
    mark_jump(path, range.step);
    prev_z = z;
  }
  return path;
}

void attach_modes(PathSample& sample, const FieldModel& model, const PhysicalContext& ctx,
                  const Vec3& axis, std::optional<double> axial_frequency_mhz) {
  const PseudoSample pp = model.pseudo(ctx, sample.position, true);
  const Vec3 a = Vec3(axis.x(), axis.y(), 0.0).normalized();
  Mat3 total = pp.hessian;
  if (axial_frequency_mhz) {
    const double delta = ctx.curvature_for_frequency(*axial_frequency_mhz) - a.dot(pp.hessian * a);
    const Mat3 along = a * a.transpose();
    total += delta * along - 0.5 * delta * (Mat3::Identity() - along);
  }
  SecularModes m = secular_frequencies(total, ctx);
  int ax = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(m.axes.col(i).dot(a)) > std::abs(m.axes.col(ax).dot(a))) ax = i;
  std::array<int, 2> radial{};
  int k = 0;
  for (int i = 2; i >= 0; --i)
    if (i != ax) radial[k++] = i;  // descending eigenvalue
  sample.frequencies_mhz = {m.frequency_mhz[ax], m.frequency_mhz[radial[0]],
                            m.frequency_mhz[radial[1]]};
  sample.modes = m;
}

EmmEstimate emm_estimate(const Vec3& rf_field, const PhysicalContext& ctx,
                         std::optional<double> secular_mhz) {
  if (secular_mhz && !(*secular_mhz < 0.2 * ctx.rf_frequency_mhz()))
    throw std::invalid_argument("secular frequency is not small compared to the RF drive");
  EmmEstimate e;
  const double field = rf_field.norm();
  e.field_v_per_m = field;
  if (field > 0.0) e.direction = rf_field / field;
  const double w = ctx.rf_angular_frequency;
  e.amplitude_um = ctx.charge_c * field / (ctx.mass_kg * w * w) * 1.0e6;
  return e;
}

EmmEstimate emm_estimate(const PseudoSample& pseudo, const PhysicalContext& ctx,
                         std::optional<double> secular_mhz) {
  return emm_estimate(pseudo.rf_field, ctx, secular_mhz);
}

double emm_amplitude_from_phi(double phi_mev, const PhysicalContext& ctx) {
  if (phi_mev < 0.0) throw std::invalid_argument("pseudopotential must be non-negative");
  const double w = ctx.rf_angular_frequency;
  return std::sqrt(4.0 * ctx.charge_c * phi_mev * 1.0e-3 / (ctx.mass_kg * w * w)) * 1.0e6;
}

BarrierProfile barrier_profile(std::span<const PathSample> samples) {
  if (samples.size() < 3) throw AnalysisError("barrier profile needs at least 3 samples");
  BarrierProfile out;
  auto vertex = [&](std::size_t i) {
    const double x0 = samples[i - 1].s, x1 = samples[i].s, x2 = samples[i + 1].s;
    const double y0 = samples[i - 1].phi, y1 = samples[i].phi, y2 = samples[i + 1].phi;
    const double d0 = (y1 - y0) / (x1 - x0), d1 = (y2 - y1) / (x2 - x1);
    const double c2 = (d1 - d0) / (x2 - x0);
    if (c2 == 0.0) return Extremum{x1, y1};
    const double xv = 0.5 * (x0 + x1) - d0 / (2.0 * c2);
    const double yv = y0 + d0 * (xv - x0) + c2 * (xv - x0) * (xv - x1);
    return Extremum{xv, yv};
  };
  double scale = 0.0;
  for (const auto& s : samples) scale = std::max(scale, std::abs(s.phi));
  // Differences below round-off of the largest value count as flat.
  const double tol = 1e-9 * scale + 1e-300;
  for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
    const double a = samples[i - 1].phi, b = samples[i].phi, c = samples[i + 1].phi;
    if (b - a > tol && b - c >= -tol) out.peaks.push_back(vertex(i));
    if (a - b > tol && c - b >= -tol) {
      Extremum m = vertex(i);
      m.phi = std::max(0.0, m.phi);
      out.minima.push_back(m);
    }
  }
  for (const auto& s : samples) out.max_phi = std::max(out.max_phi, s.phi);
  for (const auto& p : out.peaks) out.max_phi = std::max(out.max_phi, p.phi);
  return out;
}

std::vector<Extremum> BarrierProfile::peaks_above(double fraction) const {
  double top = 0.0;
  for (const auto& p : peaks) top = std::max(top, p.phi);
  std::vector<Extremum> out;
  for (const auto& p : peaks)
    if (p.phi >= fraction * top) out.push_back(p);
  return out;
}

std::vector<Extremum> BarrierProfile::minima_between(const std::vector<Extremum>& sel) const {
  std::vector<Extremum> out;
  if (sel.size() < 2) return out;
  for (const auto& m : minima)
    if (m.s > sel.front().s && m.s < sel.back().s) out.push_back(m);
  return out;
}

RadialBudget radial_budget(double laplacian, double axial_mhz, const PhysicalContext& ctx) {
  if (!(axial_mhz >= 0.0)) throw std::invalid_argument("axial frequency must be non-negative");
  const double wa = 2.0 * constants::pi * axial_mhz * 1.0e6;
  const double ka = ctx.mass_kg * wa * wa;
  const double rest = ctx.spring_constant(laplacian) - ka;
  RadialBudget b;
  if (rest < -1e-12 * std::max(ka, 1e-30)) {
    b.stable = false;
    return b;
  }
  b.radial_mhz = std::sqrt(std::max(rest, 0.0) / (2.0 * ctx.mass_kg)) / (2.0 * constants::pi) * 1e-6;
  return b;
}

void write_path_csv(std::ostream& out, std::span<const PathSample> samples) {
  out << "x,y,z,phi_pp_meV,laplacian_meV_um2,f_axial_MHz,f_r1_MHz,f_r2_MHz\n";
  out << std::setprecision(10);
  for (const auto& s : samples) {
    out << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ',' << s.phi << ','
        << s.laplacian;
    for (const auto& f : s.frequencies_mhz) {
      out << ',';
      if (f) out << *f;
    }
    out << '\n';
  }
}

}  // namespace xjunction
