#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xjunction/field.hpp"

namespace xjunction {

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Static field and RF field amplitude seen by the ion; m r̈ = Q[E_st + E_RF cos Ωt].
class FieldSource {
 public:
  virtual ~FieldSource() = default;
  virtual Vec3 static_field(const Vec3& p) const = 0;       // V/m
  virtual Vec3 rf_field(const Vec3& p) const = 0;           // peak, V/m
  virtual double static_potential(const Vec3& p) const = 0; // meV per charge
};

/// Fields of a layout: RF electrodes at the context's peak voltage and the
/// given static voltages on the control electrodes.
class LayoutSource : public FieldSource {
 public:
  LayoutSource(const FieldModel& model, const PhysicalContext& ctx,
               const std::map<std::string, double>& voltages);
  Vec3 static_field(const Vec3& p) const override;
  Vec3 rf_field(const Vec3& p) const override;
  double static_potential(const Vec3& p) const override;

 private:
  const FieldModel& model_;
  double rf_volts_;
  std::vector<std::pair<std::size_t, double>> active_;
};

/// Quadratic potentials about `center`:
///   static  Φ = ½ dᵀ K_st d − 1e-3 E_st0·d   (meV, K_st in meV/µm², E_st0 in V/m)
///   RF      E = E_rf0 − K_rf d          (V/m, K_rf in V/m per µm)
/// with d = r − center.
struct HarmonicSource : FieldSource {
  Vec3 center = Vec3::Zero();
  Mat3 static_curvature = Mat3::Zero();
  Vec3 static_field0 = Vec3::Zero();
  Vec3 rf_field0 = Vec3::Zero();
  Mat3 rf_gradient = Mat3::Zero();

  Vec3 static_field(const Vec3& p) const override;
  Vec3 rf_field(const Vec3& p) const override;
  double static_potential(const Vec3& p) const override;
};

struct TrajectoryConfig {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();    // µm/µs
  double duration_us = 5.0;
  double step_fraction = 1.0 / 200.0;  // of the RF period
  int decimation = 1;              // keep every n-th step
  bool rf = true;                  // false: static field only
  double h = 50.0;                 // escape below 0.1 h or beyond 1e3 h

  void validate() const;
};

struct Trajectory {
  std::vector<double> t;           // µs
  std::vector<Vec3> position;      // µm
  std::vector<Vec3> velocity;      // µm/µs
  double sample_interval = 0.0;    // µs
  bool escaped = false;
  std::string escape_reason;
};

/// Position at t = 0 on the driven orbit r(t) = p − Q E_RF(p) cos(Ωt) / (m Ω²),
/// which starts the ion with little secular motion about p.
Vec3 driven_orbit_start(const FieldSource& source, const PhysicalContext& ctx, const Vec3& point);

/// Fixed-step classical RK4 on the 6D state.
Trajectory integrate(const FieldSource& source, const PhysicalContext& ctx,
                     const TrajectoryConfig& config);
Trajectory integrate(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                     const std::map<std::string, double>& voltages,
                     const TrajectoryConfig& config);

/// max |E(t) − E(0)| / max kinetic energy, for a static-only trajectory.
double energy_drift(const Trajectory& trajectory, const FieldSource& source,
                    const PhysicalContext& ctx);

struct EmmComponent {
  double amplitude_um = 0.0;       // |r_Ω|
  Vec3 amplitude = Vec3::Zero();   // per axis
  Vec3 phase = Vec3::Zero();       // rad, relative to cos Ωt
  Vec3 direction = Vec3::Zero();
  int periods = 0;                 // RF periods demodulated
  bool steady = true;              // halves agree within 10 %
};

/// Component at the drive frequency by Hann-windowed synchronous
/// demodulation over an integer number of periods, after discarding the
/// leading fraction of the record.
EmmComponent extract_emm(const Trajectory& trajectory, double omega_rad_per_us,
                         double discard_fraction = 0.25);

/// Frequency (MHz) of the largest spectral peak of the motion along
/// `direction` inside [f_lo, f_hi].
double spectrum_peak(const Trajectory& trajectory, const Vec3& direction, double f_lo_mhz,
                     double f_hi_mhz, double discard_fraction = 0.0);

struct Compensation {
  std::map<std::string, double> voltages;
  Mat3 axes = Mat3::Identity();              // pseudopotential principal axes, columns
  Eigen::Vector3d pseudo_eigenvalues = Eigen::Vector3d::Zero();  // descending
  Eigen::Vector3d curvatures = Eigen::Vector3d::Zero();  // total, along the axes
  std::array<std::optional<double>, 3> frequency_mhz;    // along the axes
  Vec3 residual_field = Vec3::Zero();        // V/m, static + ponderomotive
  double max_abs_voltage = 0.0;
};

/// Minimal-norm static voltages cancelling the ponderomotive force at
/// `point` and giving the total Hessian the target frequencies along the
/// pseudopotential principal axes (descending eigenvalue order). Only the
/// trace-free part of the targets can be set; the trace is fixed by the RF.
Compensation compensate_and_confine(const FieldModel& model, const ElectrodeLayout& layout,
                                    const PhysicalContext& ctx, const Vec3& point,
                                    const std::array<double, 3>& targets_mhz,
                                    std::vector<std::string> electrodes = {});

/// t_us,x,y,z,vx,vy,vz; every `decimation`-th stored sample.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory, int decimation = 1);

}  // namespace xjunction
