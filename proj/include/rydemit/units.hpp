#pragma once

#include <cmath>

// Internal unit system used everywhere in this library:
//   length      micrometre (um)
//   time        nanosecond (ns)
//   frequency   angular, rad/ns  (1 GHz of ordinary frequency = 2*pi rad/ns)
//   velocity    um/ns            (1 um/ns = 1000 m/s)
//   energy      expressed as angular frequency, i.e. hbar = 1
// Keeping hbar out of the Hamiltonian makes every matrix element a rate in
// rad/ns, which is also what the integrator wants.

namespace rydemit::units {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

// CODATA values, SI.
inline constexpr double kB_SI = 1.380649e-23;        // J/K
inline constexpr double amu_SI = 1.66053906660e-27;  // kg

// Conversions into the internal system.
inline constexpr double m_per_s = 1.0e-3;  // um/ns per (m/s)

// Ordinary frequency in GHz -> angular frequency in rad/ns.
constexpr double ghz(double f) { return two_pi * f; }

// Thermal velocity sigma = sqrt(kB*T/m) for one Cartesian component,
// returned in um/ns.  mass in atomic mass units.
inline double thermal_sigma(double temperature_K, double mass_amu) {
  double var_SI = kB_SI * temperature_K / (mass_amu * amu_SI);
  return std::sqrt(var_SI) * m_per_s;
}

}  // namespace rydemit::units
