// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "spinprobe/charge_dynamics.hpp"
#include "spinprobe/coherence.hpp"

namespace spinprobe {

// Register layout: qubit 0 is the probe restricted to {m_s = 0, m_s = -1}, treated as a
// pseudo spin-1/2 with m_s = 0 as "up"; qubits 1..K are dark spins. Basis index bit
// (K - q) holds qubit q, with 0 = up. All Hamiltonians are in Hz and propagate as
// exp(-i 2 pi H t).

using CMatrix = Eigen::MatrixXcd;

enum class DriveTarget { Probe, DarkSpin };

/// One microwave tone in its own rotating frame.
struct Drive {
  DriveTarget target = DriveTarget::Probe;
  int index = 0;          ///< dark spin index for DriveTarget::DarkSpin
  double detuning = 0.0;  ///< Hz
  double rabi = 0.0;      ///< Hz
  double phase = 0.0;     ///< rad; 0 = +X, pi = -X, pi/2 = +Y
};

struct LaserSegment {
  double power = 0.0;     ///< W
  double duration = 0.0;  ///< s
};

/// Simultaneous tones applied for `duration`. With `secular` set, the coupling terms are
/// replaced by their average over the dressed-state precession (first-order average
/// Hamiltonian), which keeps only energy-conserving flip-flops between dressed spins.
struct MicrowaveSegment {
  std::vector<Drive> drives;
  double duration = 0.0;
  bool secular = false;
};

struct DelaySegment {
  double duration = 0.0;
};

using PulseSegment = std::variant<LaserSegment, MicrowaveSegment, DelaySegment>;

double segment_duration(const PulseSegment& segment);
void validate_segment(const PulseSegment& segment);

/// Optical response: NV repolarization time (power-law interpolation between two calibration
/// points) and dark-spin depolarization at the photo-ionization rate.
struct LaserResponse {
  double power_low = 36e-6;
  double repol_time_low = 2.8e-6;
  double power_high = 3300e-6;
  double repol_time_high = 0.24e-6;
  SaturationModel ionization = default_saturation_model();
  bool allow_extrapolation = false;

  double repolarization_time(double power_w) const;
  double dark_depolarization_rate(double power_w) const;
};

struct SpinRegister {
  int n_dark = 1;
  std::vector<double> couplings;       ///< a_i, Hz
  double probe_static_detuning = 0.0;  ///< e.g. summed Stark shift of ionized neighbours, Hz
  CMatrix state;                       ///< density operator, dimension 2^(n_dark + 1)
  /// Dark-spin T1 applied during every segment when finite; the closed system has none.
  double dark_t1 = std::numeric_limits<double>::infinity();
  LaserResponse laser;

  int dimension() const { return 1 << (n_dark + 1); }
  /// <sigma_z> of the probe: +1 for m_s = 0.
  double probe_polarization() const;
  /// <sigma_z> of dark spin i.
  double dark_polarization(int i) const;
  void validate(double tol = 1e-9) const;

  /// Probe in m_s = 0; dark spin i diagonal with <sigma_z> = polarizations[i].
  static SpinRegister prepare(std::span<const double> couplings, std::span<const double> polarizations);
};

// Single-qubit operators embedded in the register (spin-1/2 normalization).
CMatrix spin_operator(int n_qubits, int qubit, char axis);

/// Rotating-frame Hamiltonian (Hz) of one segment. Throws DomainError for a dark-spin index
/// outside the register.
CMatrix build_hamiltonian(const PulseSegment& segment, const SpinRegister& reg);

/// Default step bound: 1 / (50 * largest frequency scale in the segment).
double default_dt_max(const PulseSegment& segment, const SpinRegister& reg);

/// Propagates the register through one segment. Unitary segments use the exact propagator of
/// the piecewise-constant Hamiltonian; laser segments and a finite dark T1 switch to a
/// Lindblad propagator exp(L dt) applied in steps of at most dt_max (<= 0 selects the default).
/// Throws NumericalInstabilityError when the state leaves the physical set beyond 1e-9.
SpinRegister evolve(const SpinRegister& reg, const PulseSegment& segment, double dt_max = 0.0);

/// Drives the probe towards m_s = 0 with time constant t_repol(P) while dark spins depolarize
/// at the photo-ionization rate. Throws DomainError outside the calibrated power range unless
/// the register's laser response allows extrapolation.
SpinRegister laser_repolarize(const SpinRegister& reg, double power_w, double duration);

/// Replaces the probe with a pure m_s = 0 state, keeping the dark-spin reduced state.
SpinRegister reset_probe(const SpinRegister& reg);

// ---------------------------------------------------------------------------------------
// DEER oracle
// ---------------------------------------------------------------------------------------

struct DeerSimulationOptions {
  double hard_pulse_rabi = 1e12;  ///< Hz; pulses this fast approximate ideal rotations
};

/// Simulated probe coherence for the sequence pi/2 - tau/2 - (pi_probe + pi_dark) - tau/2 - pi/2.
/// Charge and addressing are treated as a classical mixture: each defect is ionized (Stark
/// shift only), neutral and undriven, or neutral and flipped, with probabilities
/// 1 - rho, rho (1 - eta), rho eta. S0 is read with a +X final pulse and S_pi/2 with -Y.
/// A nonzero background rate multiplies the coherent result by the stretched exponential.
CoherenceCurve simulate_deer(std::span<const double> tau, const ProbeSpin& probe, double eta,
                             std::span<const PolarizedDefect> defects,
                             const DeerSimulationOptions& options = {});

// ---------------------------------------------------------------------------------------
// Pump-probe protocol
// ---------------------------------------------------------------------------------------

struct ReadoutStage {
  double tau_p = 2.5e-6;             ///< DEER probe time, s
  double probe_rabi_factor = 2.0;    ///< probe Rabi rate relative to the spin-lock rate
};

/// Hartmann-Hahn pump, optional probe repolarization, free evolution window, out-of-phase
/// DEER readout. Each shot is run with the initial probe pulse along +X and -X and the
/// differential signal is half their difference.
struct PumpProbeSequence {
  double spin_lock_duration = 5e-6;  ///< s
  double rabi = 400e3;               ///< matched probe and dark-spin Rabi rate, Hz
  bool secular_spin_lock = true;
  std::optional<LaserSegment> repolarize;  ///< ideal probe reset when absent
  std::vector<PulseSegment> evolution;
  std::optional<ReadoutStage> readout;
  std::optional<LaserSegment> reset;
  double dt_max = 0.0;  ///< <= 0 selects the per-segment default

  void validate() const;
};

struct PumpProbeRecord {
  double p_probe = 0.0;               ///< probe lock-axis polarization after the spin lock
  std::vector<double> p_dark;         ///< dark lock-axis polarization after the spin lock
  std::vector<double> p_dark_readout; ///< dark <sigma_z> entering the readout
  double s_pi2 = 0.0;                 ///< differential out-of-phase signal
};

/// Runs the protocol on a register whose dark spins all start unpolarized. Throws
/// SequenceError when the sequence has no readout stage.
PumpProbeRecord run_pump_probe(const PumpProbeSequence& sequence, const SpinRegister& reg);

/// Charge-averaged protocol over the 2^K configurations of `defects` (K <= 3). Ionized
/// defects are decoupled; p_dark entries are population-weighted.
PumpProbeRecord run_pump_probe(const PumpProbeSequence& sequence, std::span<const NsDefect> defects);

}  // namespace spinprobe
