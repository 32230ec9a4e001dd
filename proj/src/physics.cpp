#include "xjunction/physics.hpp"

#include <cmath>
#include <stdexcept>

namespace xjunction {

PhysicalContext PhysicalContext::calcium40() {
  PhysicalContext ctx;
  ctx.mass_kg = constants::calcium40_atomic_mass * constants::atomic_mass_unit -
                constants::electron_mass;
  ctx.charge_c = constants::elementary_charge;
  ctx.rf_peak_voltage = 40.0;
  ctx.rf_angular_frequency = 2.0 * constants::pi * 40.0e6;
  return ctx;
}

void PhysicalContext::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(mass_kg)) throw std::invalid_argument("ion mass must be positive");
  if (!positive(charge_c)) throw std::invalid_argument("ion charge must be positive");
  if (!positive(rf_peak_voltage)) throw std::invalid_argument("RF voltage must be positive");
  if (!positive(rf_angular_frequency))
    throw std::invalid_argument("RF angular frequency must be positive");
}

double PhysicalContext::rf_frequency_mhz() const {
  return rf_angular_frequency / (2.0 * constants::pi) * 1e-6;
}

double PhysicalContext::rf_period_us() const { return 1.0 / rf_frequency_mhz(); }

double PhysicalContext::pseudo_prefactor() const {
  // Q |E|² / (4 m Ω²) in volts with |E| = V_RF |∇Θ| · 1e6 m⁻¹, then V -> mV.
  const double field_scale = rf_peak_voltage * 1.0e6;
  return 1.0e3 * charge_c * field_scale * field_scale /
         (4.0 * mass_kg * rf_angular_frequency * rf_angular_frequency);
}

double PhysicalContext::spring_constant(double curvature_mev_um2) const {
  // 1 mV/µm² = 1e9 V/m²
  return charge_c * curvature_mev_um2 * 1.0e9;
}

double PhysicalContext::frequency_mhz(double curvature_mev_um2) const {
  const double omega = std::sqrt(spring_constant(curvature_mev_um2) / mass_kg);
  return omega / (2.0 * constants::pi) * 1e-6;
}

double PhysicalContext::curvature_for_frequency(double frequency_mhz) const {
  const double omega = 2.0 * constants::pi * frequency_mhz * 1e6;
  return mass_kg * omega * omega / (charge_c * 1.0e9);
}

double PhysicalContext::acceleration_per_field() const {
  // Q/m [m/s² per V/m] · (1e6 µm/m) / (1e12 µs²/s²)
  return charge_c / mass_kg * 1.0e-6;
}

}  // namespace xjunction
