#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xjunction/field.hpp"
#include "xjunction/qp.hpp"

namespace xjunction {

class WaveformError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ConstraintClass { field, alignment, axial_curvature, radial_floor, voltage_bounds };
const char* to_string(ConstraintClass c);

/// Raised when the waveform QP has no solution. `step` is the first path
/// index implicated by the infeasibility certificate.
class WaveformInfeasible : public WaveformError {
 public:
  WaveformInfeasible(ConstraintClass c, std::size_t step, const std::string& detail);
  ConstraintClass constraint() const { return constraint_; }
  std::size_t step() const { return step_; }

 private:
  ConstraintClass constraint_;
  std::size_t step_;
};

/// Per-volt fields and curvatures of the control electrodes along a path,
/// plus the pseudopotential contribution of the RF electrodes.
struct FieldTable {
  std::vector<std::string> electrodes;
  std::vector<Vec2> centroids;
  std::vector<Vec3> positions;
  std::vector<Eigen::Matrix3Xd> field;      // V/m per V, 3 × J per step
  std::vector<std::vector<Mat3>> hessian;   // meV/µm² per V, [step][electrode]
  std::vector<Vec3> pseudo_field;           // -∇φ_PP, V/m
  std::vector<Mat3> pseudo_hessian;         // meV/µm²

  std::size_t steps() const { return positions.size(); }
  std::size_t size() const { return electrodes.size(); }
  /// Hessian elements {xx, xy, xz, yy, yz, zz} of one electrode at one step.
  std::array<double, 6> hessian_elements(std::size_t step, std::size_t electrode) const;
};

/// Electrodes in `subset` (all control electrodes when empty) evaluated at
/// every position.
FieldTable build_field_table(const FieldModel& model, const ElectrodeLayout& layout,
                             const PhysicalContext& ctx, std::span<const Vec3> positions,
                             std::span<const std::string> subset = {});
FieldTable build_field_table(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                             std::span<const Vec3> positions,
                             std::span<const std::string> subset = {});

/// Middle segments of a segmented junction: "c" and the arm-indexed pieces.
std::vector<std::string> middle_segments(const ElectrodeLayout& layout);

struct WaveformWeights {
  double smoothness1 = 1.0;   // Σ ‖v_{i+1} − v_i‖²
  double smoothness2 = 1.0;   // Σ ‖v_{i+1} − 2v_i + v_{i−1}‖²
  double locality = 0.1;      // Σ (d_ij / h)² v_ij²
  double residual = 1.0e3;    // Σ ‖E_total h / 1 V‖²
  double ridge = 1.0e-3;      // Σ v_ij², makes the optimum unique
};

struct TransportRequest {
  std::vector<Vec3> positions;
  /// Unit in-plane axial direction per step; derived from the path when empty.
  std::vector<Vec3> axes;
  /// Axial frequency per step, or a single value for all steps.
  std::vector<double> axial_mhz = {1.5};
  double radial_floor = 3.0;  // transverse curvatures ≥ floor · H_axial
  double v_min = -10.0;
  double v_max = 10.0;
  double h = 50.0;            // length unit of the locality and residual terms
  WaveformWeights weights;
  QpSettings qp;

  double axial_at(std::size_t step) const;
  void validate() const;
};

/// Axis of the arm the path starts in for the first half, of the arm it ends
/// in for the second half. A single position gets the axis of the arm it
/// lies in, the x axis at the centre.
std::vector<Vec3> default_axes(std::span<const Vec3> positions);

struct StepDiagnostics {
  Vec3 residual_field = Vec3::Zero();  // V/m
  Mat3 hessian = Mat3::Zero();         // static + pseudopotential, meV/µm²
  Vec3 axis = Vec3::UnitX();
  double axial_curvature = 0.0;        // aᵀHa
  double alignment = 0.0;              // max off-diagonal coupling to the axis
  std::array<std::optional<double>, 3> frequency_mhz;  // axial, r1 ≥ r2
  bool stable = false;
};

struct Waveform {
  std::vector<std::string> electrodes;
  std::vector<Vec3> positions;
  std::vector<Eigen::VectorXd> steps;
  std::vector<StepDiagnostics> diagnostics;
  QpStatus status = QpStatus::optimal;
  int iterations = 0;

  double min_voltage() const;
  double max_voltage() const;
  std::map<std::string, double> voltages(std::size_t step) const;
};

/// One QP over all steps jointly.
Waveform generate(const TransportRequest& request, const FieldTable& table,
                  const PhysicalContext& ctx);

/// Each step solved on its own, without the smoothness terms.
Waveform static_wells(const TransportRequest& request, const FieldTable& table,
                      const PhysicalContext& ctx);

/// Diagnostics of a total Hessian and residual field with respect to an axis.
StepDiagnostics diagnose(const Mat3& hessian, const Vec3& residual_field, const Vec3& axis,
                         const PhysicalContext& ctx);

/// Independent check from the layout rather than the field table.
std::vector<StepDiagnostics> verify(const Waveform& waveform, const FieldModel& model,
                                    const PhysicalContext& ctx, std::span<const Vec3> axes,
                                    int threads = 0);

void write_waveform_csv(std::ostream& out, const Waveform& waveform);
void write_diagnostics_csv(std::ostream& out, const Waveform& waveform);

struct TiltOptions {
  std::vector<std::string> electrodes;       // default: the outer thin/wide pieces
  std::optional<double> degenerate_radial_mhz = 6.06;  // rescales the RF amplitude
  double v_min = -10.0;
  double v_max = 10.0;
  double relative_tolerance = 1e-6;          // bisection stop
  QpSettings qp = {.eps_abs = 1e-11, .eps_rel = 1e-11};
};

struct TiltResult {
  std::map<std::string, double> voltages;
  PhysicalContext ctx;                       // with the calibrated RF amplitude
  double splitting_mhz = 0.0;                // f_high − f_low
  double f_high_mhz = 0.0;
  double f_low_mhz = 0.0;
  double angle_high_deg = 0.0;               // radial principal axes, to z
  double angle_low_deg = 0.0;
  double curvature_difference = 0.0;         // H_uu − H_ww at the optimum, meV/µm²
  int bisection_steps = 0;
};

/// Largest radial splitting with the radial principal axes at `tilt_deg` to
/// z and zero static field at `zone`, found by bisection on the splitting
/// with feasibility QPs.
TiltResult optimize_radial_tilt(const ElectrodeLayout& layout, const PhysicalContext& ctx,
                                const Vec3& zone, double tilt_deg, const TiltOptions& options = {});

}  // namespace xjunction
