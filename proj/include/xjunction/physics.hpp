#pragma once

#include <numbers>

namespace xjunction {

namespace constants {
inline constexpr double pi = std::numbers::pi;
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg
inline constexpr double electron_mass = 9.1093837015e-31;      // kg
inline constexpr double calcium40_atomic_mass = 39.962590863;  // u, neutral atom
}  // namespace constants

// Unit conventions used throughout the library:
//   lengths            µm
//   voltages           V
//   potentials         "meV", i.e. potential energy per elementary charge
//                      expressed in mV (identical to meV for a singly
//                      charged ion)
//   curvatures         meV/µm²
//   electric fields    V/m
//   frequencies        MHz (ordinary, not angular)
//
// PhysicalContext is the single place where these are converted to SI.
struct PhysicalContext {
  double mass_kg = 0.0;
  double charge_c = 0.0;
  double rf_peak_voltage = 0.0;       // V
  double rf_angular_frequency = 0.0;  // rad/s

  /// 40Ca+ driven with 40 V peak at 2π × 40 MHz.
  static PhysicalContext calcium40();

  /// Throws std::invalid_argument unless every field is positive and finite.
  void validate() const;

  double rf_frequency_mhz() const;
  double rf_period_us() const;

  /// φ_PP [meV] = pseudo_prefactor() · |∇Θ_RF [1/µm]|².
  double pseudo_prefactor() const;

  /// Curvature of the per-charge potential (meV/µm²) to a spring constant
  /// (N/m) and back.
  double spring_constant(double curvature_mev_um2) const;

  /// Oscillation frequency (MHz) for a positive curvature (meV/µm²).
  double frequency_mhz(double curvature_mev_um2) const;
  double curvature_for_frequency(double frequency_mhz) const;

  /// Charge-to-mass ratio in µm/µs² per (V/m).
  double acceleration_per_field() const;
};

// Gradient of a per-charge potential in meV/µm to an electric field in V/m.
inline constexpr double kFieldPerGradient = 1.0e3;

}  // namespace xjunction
