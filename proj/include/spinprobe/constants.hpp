// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numbers>

// Physical constants, CODATA 2018. All quantities SI unless the name says otherwise.
namespace spinprobe::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline constexpr double planck = 6.62607015e-34;          // J s
inline constexpr double hbar = 1.054571817e-34;           // J s
inline constexpr double speed_of_light = 299792458.0;     // m / s
inline constexpr double vacuum_permeability = 1.25663706212e-6;  // N / A^2
inline constexpr double bohr_magneton = 9.2740100783e-24;  // J / T
inline constexpr double electron_g = 2.00231930436256;     // free electron, |g|

/// Free-electron gyromagnetic ratio, rad s^-1 T^-1.
inline constexpr double gamma_electron = electron_g * bohr_magneton / hbar;

/// Secular electron-electron dipolar prefactor mu0 gamma^2 hbar / (4 pi), expressed in
/// Hz nm^3 (cycles, not radians). Roughly 52.04 MHz nm^3.
inline constexpr double dipolar_prefactor_hz_nm3 =
    vacuum_permeability / (4.0 * pi) * gamma_electron * gamma_electron * hbar / two_pi * 1e27;

/// Carbon atom number density of diamond, nm^-3. Converts ppm doping to a number density.
inline constexpr double diamond_atom_density_nm3 = 176.2;

}  // namespace spinprobe::constants
