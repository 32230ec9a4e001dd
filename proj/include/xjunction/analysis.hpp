#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xjunction/field.hpp"

namespace xjunction {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axial samples start, start + step, ... up to stop (inclusive within
/// round-off). stop < start is an empty range.
struct AxialRange {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::vector<double> values() const;
};

/// A path lives in the vertical plane through `origin` spanned by the
/// in-plane unit vector `axis` and ẑ: r(s, z) = origin + s·axis + z·ẑ.
struct PathOptions {
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double h = 50.0;                 // reference height, µm
  double window_low = 0.2;         // search window in units of h
  double window_high = 3.0;
  double grid_step = 0.02;         // coarse scan spacing in units of h
  bool transverse_2d = false;      // also relax the in-plane transverse coordinate
  bool with_modes = false;         // compute principal axes + frequencies
  std::optional<double> axial_frequency_mhz;  // static axial well used for the modes
};

struct PathSample {
  double s = 0.0;                  // axial coordinate, µm
  Vec3 position = Vec3::Zero();
  double phi = 0.0;                // meV
  double laplacian = 0.0;          // meV/µm²
  std::optional<SecularModes> modes;
  // Frequencies sorted as (axial, radial 1, radial 2) when modes are present.
  std::array<std::optional<double>, 3> frequencies_mhz;
  bool jump = false;               // distance to the previous sample exceeds 2·step
};

struct Path {
  std::vector<PathSample> samples;
  bool complete = true;
  std::string diagnostic;

  double min_laplacian() const;
  double max_phi() const;
  const PathSample& at_max_phi() const;
  int jump_count() const;
};

Path path_min_pp(const FieldModel& model, const PhysicalContext& ctx, const AxialRange& range,
                 const PathOptions& options = {});
Path path_fixed_height(const FieldModel& model, const PhysicalContext& ctx, double height,
                       const AxialRange& range, const PathOptions& options = {});
Path path_const_confinement(const FieldModel& model, const PhysicalContext& ctx,
                            double target_laplacian, const AxialRange& range,
                            const PathOptions& options = {});

/// Fills modes and (axial, radial, radial) frequencies of a sample. The static
/// part sets the axial curvature to the target and removes the same amount
/// equally from the two transverse directions.
void attach_modes(PathSample& sample, const FieldModel& model, const PhysicalContext& ctx,
                  const Vec3& axis, std::optional<double> axial_frequency_mhz);

struct EmmEstimate {
  double amplitude_um = 0.0;
  Vec3 direction = Vec3::Zero();   // unit vector, zero when the field vanishes
  double field_v_per_m = 0.0;      // |E_RF| projected on the direction
};

/// Amplitude Q·E/(m·Ω²) of the driven motion in the RF field `rf_field`.
/// A secular frequency, when given, must be well below the drive.
EmmEstimate emm_estimate(const Vec3& rf_field, const PhysicalContext& ctx,
                         std::optional<double> secular_mhz = std::nullopt);
EmmEstimate emm_estimate(const PseudoSample& pseudo, const PhysicalContext& ctx,
                         std::optional<double> secular_mhz = std::nullopt);
/// √(4 Q φ / (m Ω²)) for φ in meV.
double emm_amplitude_from_phi(double phi_mev, const PhysicalContext& ctx);

struct Extremum {
  double s = 0.0;
  double phi = 0.0;
};

struct BarrierProfile {
  std::vector<Extremum> peaks;     // interior local maxima
  std::vector<Extremum> minima;    // interior local minima (nulls)
  double max_phi = 0.0;

  /// Peaks at least `fraction` of the highest one, dropping far-field ripple.
  std::vector<Extremum> peaks_above(double fraction) const;
  /// Minima lying between the first and last of those peaks.
  std::vector<Extremum> minima_between(const std::vector<Extremum>& peaks) const;
};

BarrierProfile barrier_profile(std::span<const PathSample> samples);

struct RadialBudget {
  double radial_mhz = 0.0;
  bool stable = true;
};

/// Radial frequency when the total confinement ∇²φ (meV/µm²) carries one axial
/// mode at f_a and the remainder is split equally between two radial modes.
RadialBudget radial_budget(double laplacian, double axial_mhz, const PhysicalContext& ctx);

/// Columns x,y,z,phi_pp_meV,laplacian_meV_um2,f_axial_MHz,f_r1_MHz,f_r2_MHz.
void write_path_csv(std::ostream& out, std::span<const PathSample> samples);

}  // namespace xjunction
