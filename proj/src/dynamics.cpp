#include "xjunction/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>

#include <boost/math/tools/minima.hpp>

#include "xjunction/qp.hpp"

namespace xjunction {

namespace {

constexpr double kVoltGradientToField = 1.0e6;  // V·(1/µm) to V/m

struct State {
  Vec3 r;
  Vec3 v;
};

double hann(std::size_t i, std::size_t n) {
  return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) /
                              static_cast<double>(n));
}

}  // namespace

LayoutSource::LayoutSource(const FieldModel& model, const PhysicalContext& ctx,
                           const std::map<std::string, double>& voltages)
    : model_(model), rf_volts_(ctx.rf_peak_voltage) {
  ctx.validate();
  for (const auto& [name, v] : voltages) {
    if (!std::isfinite(v)) throw DynamicsError("non-finite voltage on " + name);
    if (v != 0.0) active_.emplace_back(model.index_of(name), v);
  }
}

Vec3 LayoutSource::static_field(const Vec3& p) const {
  Vec3 g = Vec3::Zero();
  for (const auto& [i, v] : active_) g += v * model_.basis_gradient(i, p);
  return -kVoltGradientToField * g;
}

Vec3 LayoutSource::rf_field(const Vec3& p) const {
  return -kVoltGradientToField * rf_volts_ * model_.rf_gradient(p);
}

double LayoutSource::static_potential(const Vec3& p) const {
  double phi = 0.0;
  for (const auto& [i, v] : active_) phi += v * model_.basis_potential(i, p);
  return 1.0e3 * phi;
}

Vec3 HarmonicSource::static_field(const Vec3& p) const {
  return static_field0 - kFieldPerGradient * (static_curvature * (p - center));
}

Vec3 HarmonicSource::rf_field(const Vec3& p) const {
  return rf_field0 - rf_gradient * (p - center);
}

double HarmonicSource::static_potential(const Vec3& p) const {
  const Vec3 d = p - center;
  return 0.5 * d.dot(static_curvature * d) - static_field0.dot(d) / kFieldPerGradient;
}

Vec3 driven_orbit_start(const FieldSource& source, const PhysicalContext& ctx, const Vec3& point) {
  const double omega = ctx.rf_angular_frequency * 1e-6;
  return point - ctx.acceleration_per_field() * source.rf_field(point) / (omega * omega);
}

void TrajectoryConfig::validate() const {
  if (!position.allFinite() || !velocity.allFinite())
    throw DynamicsError("initial state must be finite");
  if (!(duration_us > 0.0) || !std::isfinite(duration_us))
    throw DynamicsError("duration must be positive");
  if (!(step_fraction > 0.0) || step_fraction > 1.0 / 50.0)
    throw DynamicsError("step must be at most 1/50 of the RF period");
  if (decimation < 1) throw DynamicsError("decimation must be at least 1");
  if (!(h > 0.0)) throw DynamicsError("length scale must be positive");
}

Trajectory integrate(const FieldSource& source, const PhysicalContext& ctx,
                     const TrajectoryConfig& config) {
  ctx.validate();
  config.validate();
  const double k = ctx.acceleration_per_field();
  const double omega = ctx.rf_angular_frequency * 1e-6;  // rad/µs
  const double dt = ctx.rf_period_us() * config.step_fraction;
  const auto steps = static_cast<std::size_t>(std::ceil(config.duration_us / dt - 1e-9));

  auto accel = [&](const Vec3& r, double t) -> Vec3 {
    Vec3 e = source.static_field(r);
    if (config.rf) e += source.rf_field(r) * std::cos(omega * t);
    return k * e;
  };

  Trajectory out;
  out.sample_interval = dt * config.decimation;
  const std::size_t keep = steps / config.decimation + 1;
  out.t.reserve(keep);
  out.position.reserve(keep);
  out.velocity.reserve(keep);
  auto store = [&](double t, const State& s) {
    out.t.push_back(t);
    out.position.push_back(s.r);
    out.velocity.push_back(s.v);
  };

  State s{config.position, config.velocity};
  store(0.0, s);
  for (std::size_t n = 0; n < steps; ++n) {
    const double t = n * dt;
    const Vec3 a1 = accel(s.r, t);
    const Vec3 r2 = s.r + 0.5 * dt * s.v;
    const Vec3 v2 = s.v + 0.5 * dt * a1;
    const Vec3 a2 = accel(r2, t + 0.5 * dt);
    const Vec3 r3 = s.r + 0.5 * dt * v2;
    const Vec3 v3 = s.v + 0.5 * dt * a2;
    const Vec3 a3 = accel(r3, t + 0.5 * dt);
    const Vec3 r4 = s.r + dt * v3;
    const Vec3 v4 = s.v + dt * a3;
    const Vec3 a4 = accel(r4, t + dt);
    s.r += dt / 6.0 * (s.v + 2.0 * v2 + 2.0 * v3 + v4);
    s.v += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);

    const double tn = (n + 1) * dt;
    if (!s.r.allFinite() || !s.v.allFinite()) {
      out.escaped = true;
      out.escape_reason = "non-finite state";
    } else if (s.r.z() <= 0.1 * config.h) {
      out.escaped = true;
      out.escape_reason = "reached the electrode plane";
    } else if (s.r.norm() > 1.0e3 * config.h) {
      out.escaped = true;
      out.escape_reason = "left the simulation region";
    }
    if (out.escaped) {
      if (s.r.allFinite() && s.v.allFinite()) store(tn, s);
      break;
    }
    if ((n + 1) % config.decimation == 0) store(tn, s);
  }
  return out;
}

Trajectory integrate(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                     const std::map<std::string, double>& voltages,
                     const TrajectoryConfig& config) {
  const FieldModel model(layout);
  return integrate(LayoutSource(model, ctx, voltages), ctx, config);
}

double energy_drift(const Trajectory& trajectory, const FieldSource& source,
                    const PhysicalContext& ctx) {
  if (trajectory.t.empty()) throw DynamicsError("empty trajectory");
  const double k = ctx.acceleration_per_field() * 1.0e3;  // µm²/µs² per meV
  auto energy = [&](std::size_t i, double& kinetic) {
    kinetic = 0.5 * trajectory.velocity[i].squaredNorm();
    return kinetic + k * source.static_potential(trajectory.position[i]);
  };
  double ke = 0.0;
  const double e0 = energy(0, ke);
  double max_ke = ke, drift = 0.0;
  for (std::size_t i = 1; i < trajectory.t.size(); ++i) {
    drift = std::max(drift, std::abs(energy(i, ke) - e0));
    max_ke = std::max(max_ke, ke);
  }
  if (max_ke == 0.0) return drift == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return drift / max_ke;
}

namespace {

struct Demod {
  Eigen::Vector3cd c = Eigen::Vector3cd::Zero();
};

// Windowed complex amplitude of each axis at omega over samples [begin, begin + n).
Demod demodulate(const Trajectory& tr, double omega, std::size_t begin, std::size_t n) {
  Vec3 mean = Vec3::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = hann(i, n);
    mean += w * tr.position[begin + i];
    wsum += w;
  }
  mean /= wsum;
  Demod d;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = hann(i, n);
    const std::complex<double> ph = std::polar(1.0, -omega * tr.t[begin + i]);
    const Vec3 x = tr.position[begin + i] - mean;
    for (int a = 0; a < 3; ++a) d.c[a] += w * x[a] * ph;
  }
  d.c *= 2.0 / wsum;
  return d;
}

}  // namespace

EmmComponent extract_emm(const Trajectory& trajectory, double omega_rad_per_us,
                         double discard_fraction) {
  if (!(omega_rad_per_us > 0.0)) throw DynamicsError("drive frequency must be positive");
  if (!(discard_fraction >= 0.0 && discard_fraction < 1.0))
    throw DynamicsError("discard fraction must lie in [0, 1)");
  const std::size_t total = trajectory.t.size();
  if (total < 2 || !(trajectory.sample_interval > 0.0))
    throw DynamicsError("trajectory too short");
  const double period = 2.0 * std::numbers::pi / omega_rad_per_us;
  const auto begin = static_cast<std::size_t>(std::ceil(discard_fraction * (total - 1)));
  const double span = trajectory.t[total - 1] - trajectory.t[begin];
  const int periods = static_cast<int>(std::floor(span / period + 1e-9));
  if (periods < 20)
    throw DynamicsError("only " + std::to_string(periods) +
                        " RF periods after the transient, need 20");
  const auto n = static_cast<std::size_t>(
      std::llround(periods * period / trajectory.sample_interval));
  const std::size_t count = std::min(n, total - begin);

  Demod full = demodulate(trajectory, omega_rad_per_us, begin, count);
  // Rounding floor relative to the coordinates of the record.
  double scale = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i)
    scale = std::max(scale, trajectory.position[i].cwiseAbs().maxCoeff());
  const double floor = 1e-13 * std::max(1.0, scale);

  EmmComponent out;
  out.periods = periods;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(full.c[a]) <= floor) full.c[a] = 0.0;
    out.amplitude[a] = std::abs(full.c[a]);
    out.phase[a] = out.amplitude[a] > 0.0 ? std::arg(full.c[a]) : 0.0;
  }
  out.amplitude_um = out.amplitude.norm();
  if (out.amplitude_um > 0.0) {
    int ref = 0;
    out.amplitude.maxCoeff(&ref);
    for (int a = 0; a < 3; ++a)
      out.direction[a] = (full.c[a] * std::conj(full.c[ref])).real() /
                         (out.amplitude[ref] * out.amplitude_um);
    out.direction.normalize();
  }

  const std::size_t half = count / 2;
  const double a1 = demodulate(trajectory, omega_rad_per_us, begin, half).c.norm();
  const double a2 = demodulate(trajectory, omega_rad_per_us, begin + half, half).c.norm();
  const double larger = std::max(a1, a2);
  out.steady = larger <= floor || std::abs(a1 - a2) <= 0.1 * larger;
  return out;
}

double spectrum_peak(const Trajectory& trajectory, const Vec3& direction, double f_lo_mhz,
                     double f_hi_mhz, double discard_fraction) {
  if (!(f_lo_mhz > 0.0 && f_hi_mhz > f_lo_mhz)) throw DynamicsError("invalid frequency band");
  if (direction.norm() == 0.0) throw DynamicsError("direction must be nonzero");
  const std::size_t total = trajectory.t.size();
  const auto begin = static_cast<std::size_t>(std::ceil(discard_fraction * (total - 1)));
  if (total < begin + 16) throw DynamicsError("trajectory too short");
  const std::size_t n = total - begin;
  const Vec3 u = direction.normalized();

  std::vector<double> x(n), w(n), t(n);
  double mean = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = hann(i, n);
    x[i] = trajectory.position[begin + i].dot(u);
    t[i] = trajectory.t[begin + i];
    mean += w[i] * x[i];
    wsum += w[i];
  }
  mean /= wsum;
  for (double& xi : x) xi -= mean;

  auto power = [&](double f) {
    const double om = 2.0 * std::numbers::pi * f;
    std::complex<double> s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * x[i] * std::polar(1.0, -om * t[i]);
    return std::norm(s);
  };

  const double span = t[n - 1] - t[0];
  const double df = 0.25 / span;
  const auto bins = static_cast<std::size_t>(std::ceil((f_hi_mhz - f_lo_mhz) / df));
  double best_f = f_lo_mhz, best_p = -1.0;
  for (std::size_t b = 0; b <= bins; ++b) {
    const double f = std::min(f_lo_mhz + b * df, f_hi_mhz);
    const double p = power(f);
    if (p > best_p) {
      best_p = p;
      best_f = f;
    }
  }
  const double lo = std::max(f_lo_mhz, best_f - df), hi = std::min(f_hi_mhz, best_f + df);
  return boost::math::tools::brent_find_minima([&](double f) { return -power(f); }, lo, hi,
                                               40)
      .first;
}

Compensation compensate_and_confine(const FieldModel& model, const ElectrodeLayout& layout,
                                    const PhysicalContext& ctx, const Vec3& point,
                                    const std::array<double, 3>& targets_mhz,
                                    std::vector<std::string> electrodes) {
  ctx.validate();
  require_above_plane(point);
  for (double f : targets_mhz)
    if (!(f > 0.0) || !std::isfinite(f)) throw DynamicsError("target frequencies must be positive");
  if (electrodes.empty()) electrodes = layout.names_with_role(ElectrodeRole::control);
  if (electrodes.empty()) throw DynamicsError("no control electrodes");
  const std::size_t J = electrodes.size();

  const PseudoSample ps = model.pseudo(ctx, point, true);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(ps.hessian);
  Mat3 U;
  Eigen::Vector3d lam;
  for (int i = 0; i < 3; ++i) {
    U.col(i) = eig.eigenvectors().col(2 - i);
    lam[i] = eig.eigenvalues()[2 - i];
  }
  Eigen::Vector3d c;
  for (int i = 0; i < 3; ++i) c[i] = ctx.curvature_for_frequency(targets_mhz[i]);

  // Rows: 3 gradient components (scaled by a length), 3 off-diagonals and
  // 2 diagonal differences of UᵀHU.
  const double h = point.z();
  Eigen::MatrixXd C(8, J);
  Eigen::VectorXd d(8);
  std::vector<Mat3> hess(J);
  for (std::size_t j = 0; j < J; ++j) {
    const FieldSample s = model.basis(electrodes[j], point);
    hess[j] = 1.0e3 * (U.transpose() * s.hessian * U);
    C.block<3, 1>(0, j) = 1.0e3 * s.gradient / h;
    C(3, j) = hess[j](0, 1);
    C(4, j) = hess[j](0, 2);
    C(5, j) = hess[j](1, 2);
    C(6, j) = hess[j](0, 0) - hess[j](1, 1);
    C(7, j) = hess[j](1, 1) - hess[j](2, 2);
  }
  d.head<3>() = -ps.gradient / h;
  d.segment<3>(3).setZero();
  d[6] = (c[0] - c[1]) - (lam[0] - lam[1]);
  d[7] = (c[1] - c[2]) - (lam[1] - lam[2]);

  // Rows without any electrode coupling (by symmetry) must already hold.
  const double scale = C.cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < C.rows(); ++r) {
    if (C.row(r).cwiseAbs().maxCoeff() > 1e-9 * scale) {
      keep.push_back(r);
    } else if (std::abs(d[r]) > 1e-9 * std::max(1.0, d.cwiseAbs().maxCoeff())) {
      throw DynamicsError("constraint row " + std::to_string(r) +
                          " cannot be met by the chosen electrodes");
    }
  }
  Eigen::MatrixXd Ck(keep.size(), J);
  Eigen::VectorXd dk(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    Ck.row(r) = C.row(keep[r]);
    dk[r] = d[keep[r]];
  }
  Eigen::VectorXd v;
  try {
    v = solve_equality_ls(Eigen::MatrixXd::Identity(J, J), Eigen::VectorXd::Zero(J), Ck, dk);
  } catch (const QpError& e) {
    throw DynamicsError(std::string("compensation constraints are degenerate: ") + e.what());
  }

  Compensation out;
  out.axes = U;
  out.pseudo_eigenvalues = lam;
  for (std::size_t j = 0; j < J; ++j) {
    out.voltages[electrodes[j]] = v[j];
    out.max_abs_voltage = std::max(out.max_abs_voltage, std::abs(v[j]));
  }
  const StaticSample st = model.composite(out.voltages, point);
  out.residual_field = st.field() - kFieldPerGradient * ps.gradient;
  const Mat3 total = U.transpose() * (st.hessian + ps.hessian) * U;
  for (int i = 0; i < 3; ++i) {
    out.curvatures[i] = total(i, i);
    if (total(i, i) > 0.0) out.frequency_mhz[i] = ctx.frequency_mhz(total(i, i));
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory, int decimation) {
  if (decimation < 1) throw DynamicsError("decimation must be at least 1");
  const auto old = out.precision(12);
  out << "t_us,x,y,z,vx,vy,vz\n";
  for (std::size_t i = 0; i < trajectory.t.size(); i += decimation) {
    const Vec3& r = trajectory.position[i];
    const Vec3& v = trajectory.velocity[i];
    out << trajectory.t[i] << ',' << r.x() << ',' << r.y() << ',' << r.z() << ',' << v.x()
        << ',' << v.y() << ',' << v.z() << '\n';
  }
  out.precision(old);
}

}  // namespace xjunction
