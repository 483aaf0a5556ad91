// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/spin_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "spinprobe/constants.hpp"
#include "spinprobe/errors.hpp"

namespace spinprobe {

namespace {

using constants::two_pi;
constexpr Complex kI(0.0, 1.0);

CMatrix pauli_half(char axis) {
  CMatrix m = CMatrix::Zero(2, 2);
  switch (axis) {
    case 'x': m(0, 1) = 0.5; m(1, 0) = 0.5; break;
    case 'y': m(0, 1) = -0.5 * kI; m(1, 0) = 0.5 * kI; break;
    case 'z': m(0, 0) = 0.5; m(1, 1) = -0.5; break;
    case '+': m(0, 1) = 1.0; break;  // |up><down|
    case '-': m(1, 0) = 1.0; break;
    default: throw DomainError(std::string("unknown spin axis ") + axis);
  }
  return m;
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CMatrix embed(int n_qubits, int qubit, const CMatrix& op) {
  CMatrix out = CMatrix::Identity(1, 1);
  const CMatrix id = CMatrix::Identity(2, 2);
  for (int q = 0; q < n_qubits; ++q) out = kron(out, q == qubit ? op : id);
  return out;
}

double real_expectation(const CMatrix& rho, const CMatrix& op) { return (rho * op).trace().real(); }

CMatrix hermitian_part(const CMatrix& m) { return 0.5 * (m + m.adjoint()); }

/// Keeps the blocks of `coupling` that connect degenerate eigenstates of `drive`.
CMatrix secular_part(const CMatrix& coupling, const CMatrix& drive) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(drive);
  const auto& lambda = es.eigenvalues();
  const CMatrix& v = es.eigenvectors();
  CMatrix m = v.adjoint() * coupling * v;
  const double scale = lambda.cwiseAbs().maxCoeff();
  const double tol = 1e-9 * scale + 1e-9;
  for (Eigen::Index j = 0; j < m.rows(); ++j)
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      if (std::abs(lambda(j) - lambda(k)) > tol) m(j, k) = 0.0;
  return hermitian_part(v * m * v.adjoint());
}

void check_physical(const CMatrix& rho, double tol) {
  const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  if (herm > tol) throw NumericalInstabilityError("density operator lost Hermiticity");
  const Complex tr = rho.trace();
  if (std::abs(tr - 1.0) > tol) throw NumericalInstabilityError("density operator trace drifted to " + std::to_string(tr.real()));
  Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(rho), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol)
    throw NumericalInstabilityError("density operator is not positive semidefinite");
}

double max_frequency_scale(const PulseSegment& segment, const SpinRegister& reg) {
  double scale = std::abs(reg.probe_static_detuning);
  for (double a : reg.couplings) scale = std::max(scale, std::abs(a));
  if (const auto* mw = std::get_if<MicrowaveSegment>(&segment)) {
    for (const auto& d : mw->drives) scale = std::max({scale, d.rabi, std::abs(d.detuning)});
  } else if (const auto* laser = std::get_if<LaserSegment>(&segment)) {
    if (laser->power > 0.0) {
      scale = std::max(scale, 1.0 / reg.laser.repolarization_time(laser->power));
      scale = std::max(scale, reg.laser.dark_depolarization_rate(laser->power));
    }
  }
  if (std::isfinite(reg.dark_t1)) scale = std::max(scale, 1.0 / reg.dark_t1);
  return scale;
}

/// vec(A X B) = (B^T kron A) vec(X), column stacking.
CMatrix liouvillian(const CMatrix& h, const std::vector<CMatrix>& jumps) {
  const Eigen::Index d = h.rows();
  const CMatrix id = CMatrix::Identity(d, d);
  CMatrix l = -kI * two_pi * (kron(id, h) - kron(h.transpose(), id));
  for (const auto& j : jumps) {
    const CMatrix jdj = j.adjoint() * j;
    l += kron(j.conjugate(), j) - 0.5 * kron(id, jdj) - 0.5 * kron(jdj.transpose(), id);
  }
  return l;
}

Eigen::VectorXcd vec(const CMatrix& m) { return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size()); }

CMatrix unvec(const Eigen::VectorXcd& v, Eigen::Index d) { return Eigen::Map<const CMatrix>(v.data(), d, d); }

MicrowaveSegment probe_pulse(double rabi, double angle_turns, double phase) {
  return MicrowaveSegment{{Drive{DriveTarget::Probe, 0, 0.0, rabi, phase}}, angle_turns / rabi, false};
}

}  // namespace

// ---------------------------------------------------------------------------------------

double segment_duration(const PulseSegment& segment) {
  return std::visit([](const auto& s) { return s.duration; }, segment);
}

void validate_segment(const PulseSegment& segment) {
  if (!(segment_duration(segment) >= 0.0) || !std::isfinite(segment_duration(segment)))
    throw DomainError("segment duration must be finite and non-negative");
  if (const auto* laser = std::get_if<LaserSegment>(&segment)) {
    if (!(laser->power >= 0.0)) throw DomainError("laser power must be non-negative");
  }
  if (const auto* mw = std::get_if<MicrowaveSegment>(&segment)) {
    for (const auto& d : mw->drives) {
      if (!(d.rabi >= 0.0) || !std::isfinite(d.rabi)) throw DomainError("Rabi rate must be finite and non-negative");
      if (!std::isfinite(d.detuning) || !std::isfinite(d.phase)) throw DomainError("drive detuning and phase must be finite");
    }
  }
}

double LaserResponse::repolarization_time(double power_w) const {
  if (!(power_w > 0.0)) throw DomainError("repolarization needs positive laser power");
  if (!allow_extrapolation && (power_w < power_low * (1 - 1e-12) || power_w > power_high * (1 + 1e-12)))
    throw DomainError("laser power " + std::to_string(power_w) + " W outside the calibrated range [" +
                      std::to_string(power_low) + ", " + std::to_string(power_high) + "] W");
  const double x = (std::log(power_w) - std::log(power_low)) / (std::log(power_high) - std::log(power_low));
  return std::exp(std::log(repol_time_low) + x * (std::log(repol_time_high) - std::log(repol_time_low)));
}

double LaserResponse::dark_depolarization_rate(double power_w) const {
  return saturation_rate(power_w, ionization);
}

double SpinRegister::probe_polarization() const {
  return 2.0 * real_expectation(state, embed(n_dark + 1, 0, pauli_half('z')));
}

double SpinRegister::dark_polarization(int i) const {
  if (i < 0 || i >= n_dark) throw DomainError("dark spin index out of range");
  return 2.0 * real_expectation(state, embed(n_dark + 1, i + 1, pauli_half('z')));
}

void SpinRegister::validate(double tol) const {
  if (n_dark < 1 || n_dark > 3) throw DomainError("register supports 1 to 3 dark spins");
  if (static_cast<int>(couplings.size()) != n_dark) throw DomainError("one coupling per dark spin required");
  if (state.rows() != dimension() || state.cols() != dimension()) throw DomainError("state dimension mismatch");
  check_physical(state, tol);
}

SpinRegister SpinRegister::prepare(std::span<const double> couplings, std::span<const double> polarizations) {
  if (couplings.size() != polarizations.size()) throw DomainError("one polarization per dark spin required");
  SpinRegister reg;
  reg.n_dark = static_cast<int>(couplings.size());
  if (reg.n_dark < 1 || reg.n_dark > 3) throw DomainError("register supports 1 to 3 dark spins");
  reg.couplings.assign(couplings.begin(), couplings.end());
  CMatrix rho = CMatrix::Zero(2, 2);
  rho(0, 0) = 1.0;
  for (double p : polarizations) {
    if (!(std::abs(p) <= 1.0)) throw DomainError("polarization must lie in [-1, 1]");
    CMatrix dark = CMatrix::Zero(2, 2);
    dark(0, 0) = 0.5 * (1.0 + p);
    dark(1, 1) = 0.5 * (1.0 - p);
    rho = kron(rho, dark);
  }
  reg.state = rho;
  return reg;
}

CMatrix spin_operator(int n_qubits, int qubit, char axis) { return embed(n_qubits, qubit, pauli_half(axis)); }

CMatrix build_hamiltonian(const PulseSegment& segment, const SpinRegister& reg) {
  validate_segment(segment);
  const int nq = reg.n_dark + 1;
  const int dim = reg.dimension();
  const CMatrix sz = embed(nq, 0, pauli_half('z'));
  CMatrix h0 = reg.probe_static_detuning * sz;
  for (int i = 0; i < reg.n_dark; ++i) h0 += reg.couplings[i] * sz * embed(nq, i + 1, pauli_half('z'));

  const auto* mw = std::get_if<MicrowaveSegment>(&segment);
  if (mw == nullptr) return h0;

  CMatrix drive = CMatrix::Zero(dim, dim);
  for (const auto& d : mw->drives) {
    int qubit = 0;
    if (d.target == DriveTarget::DarkSpin) {
      if (d.index < 0 || d.index >= reg.n_dark)
        throw DomainError("drive targets dark spin " + std::to_string(d.index) + " but the register holds " +
                          std::to_string(reg.n_dark));
      qubit = d.index + 1;
    }
    drive += d.rabi * (std::cos(d.phase) * embed(nq, qubit, pauli_half('x')) +
                       std::sin(d.phase) * embed(nq, qubit, pauli_half('y'))) +
             d.detuning * embed(nq, qubit, pauli_half('z'));
  }
  if (mw->secular) return hermitian_part(drive + secular_part(h0, drive));
  return hermitian_part(h0 + drive);
}

double default_dt_max(const PulseSegment& segment, const SpinRegister& reg) {
  const double scale = max_frequency_scale(segment, reg);
  if (scale <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (50.0 * scale);
}

SpinRegister evolve(const SpinRegister& reg, const PulseSegment& segment, double dt_max) {
  validate_segment(segment);
  const double duration = segment_duration(segment);
  SpinRegister out = reg;
  if (duration == 0.0) return out;

  const CMatrix h = build_hamiltonian(segment, reg);
  const auto* laser = std::get_if<LaserSegment>(&segment);
  const bool dissipative = (laser != nullptr && laser->power > 0.0) || std::isfinite(reg.dark_t1);

  if (!dissipative) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    const Eigen::VectorXcd phases =
        (-kI * two_pi * duration * es.eigenvalues().cast<Complex>()).array().exp().matrix();
    const CMatrix u = es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
    out.state = hermitian_part(u * reg.state * u.adjoint());
    check_physical(out.state, 1e-9);
    return out;
  }

  const int nq = reg.n_dark + 1;
  std::vector<CMatrix> jumps;
  if (laser != nullptr && laser->power > 0.0) {
    jumps.push_back(std::sqrt(1.0 / reg.laser.repolarization_time(laser->power)) * embed(nq, 0, pauli_half('+')));
    const double gamma = reg.laser.dark_depolarization_rate(laser->power);
    for (int i = 0; i < reg.n_dark; ++i) {
      jumps.push_back(std::sqrt(0.5 * gamma) * embed(nq, i + 1, pauli_half('+')));
      jumps.push_back(std::sqrt(0.5 * gamma) * embed(nq, i + 1, pauli_half('-')));
    }
  }
  if (std::isfinite(reg.dark_t1)) {
    const double flip = 0.5 / reg.dark_t1;
    for (int i = 0; i < reg.n_dark; ++i) {
      jumps.push_back(std::sqrt(flip) * embed(nq, i + 1, pauli_half('+')));
      jumps.push_back(std::sqrt(flip) * embed(nq, i + 1, pauli_half('-')));
    }
  }

  if (!(dt_max > 0.0)) dt_max = default_dt_max(segment, reg);
  const auto n_steps = static_cast<std::uint64_t>(std::max(1.0, std::ceil(duration / dt_max)));
  const double dt = duration / static_cast<double>(n_steps);
  const CMatrix l = liouvillian(h, jumps);
  const CMatrix step = (l * dt).exp();
  const Eigen::Index d = reg.dimension();

  Eigen::VectorXcd v = vec(reg.state);
  if (n_steps <= 256) {
    for (std::uint64_t k = 0; k < n_steps; ++k) {
      v = step * v;
      check_physical(hermitian_part(unvec(v, d)), 1e-9);
    }
  } else {
    // binary powering of the step propagator
    CMatrix power = step;
    for (std::uint64_t k = n_steps; k > 0; k >>= 1) {
      if (k & 1u) v = power * v;
      if (k > 1) power = power * power;
    }
  }
  out.state = hermitian_part(unvec(v, d));
  check_physical(out.state, 1e-9);
  return out;
}

SpinRegister laser_repolarize(const SpinRegister& reg, double power_w, double duration) {
  // range check happens even for zero duration
  reg.laser.repolarization_time(power_w);
  return evolve(reg, LaserSegment{power_w, duration});
}

SpinRegister reset_probe(const SpinRegister& reg) {
  const Eigen::Index half = reg.dimension() / 2;
  const CMatrix dark = reg.state.topLeftCorner(half, half) + reg.state.bottomRightCorner(half, half);
  SpinRegister out = reg;
  out.state.setZero();
  out.state.topLeftCorner(half, half) = dark;
  return out;
}

// ---------------------------------------------------------------------------------------

CoherenceCurve simulate_deer(std::span<const double> tau, const ProbeSpin& probe, double eta,
                             std::span<const PolarizedDefect> defects, const DeerSimulationOptions& options) {
  probe.validate();
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
  if (defects.empty() || defects.size() > 3) throw DomainError("DEER simulation supports 1 to 3 dark spins");
  for (const auto& d : defects) {
    d.defect.validate();
    if (!(std::abs(d.polarization) <= 1.0)) throw DomainError("polarization must lie in [-1, 1]");
  }
  const double omega = options.hard_pulse_rabi;
  const int k = static_cast<int>(defects.size());

  // branch b_i: 0 ionized, 1 neutral and undriven, 2 neutral and flipped
  struct Branch {
    std::vector<int> kind;
    double weight;
  };
  std::vector<Branch> branches;
  int n_branches = 1;
  for (int i = 0; i < k; ++i) n_branches *= 3;
  for (int code = 0; code < n_branches; ++code) {
    Branch b{std::vector<int>(k), 1.0};
    int c = code;
    for (int i = 0; i < k; ++i) {
      b.kind[i] = c % 3;
      c /= 3;
      const double rho = defects[i].defect.rho;
      b.weight *= b.kind[i] == 0 ? 1.0 - rho : b.kind[i] == 1 ? rho * (1.0 - eta) : rho * eta;
    }
    if (b.weight > 0.0) branches.push_back(std::move(b));
  }

  CoherenceCurve curve;
  curve.tau.assign(tau.begin(), tau.end());
  curve.signal.assign(tau.size(), Complex(0.0, 0.0));
  for (const auto& b : branches) {
    std::vector<double> couplings(k), pols(k);
    double stark = 0.0;
    MicrowaveSegment flip{{Drive{DriveTarget::Probe, 0, 0.0, omega, 0.0}}, 0.5 / omega, false};
    for (int i = 0; i < k; ++i) {
      const bool neutral = b.kind[i] != 0;
      couplings[i] = neutral ? defects[i].defect.a_dipolar : 0.0;
      pols[i] = neutral ? defects[i].polarization : 0.0;
      if (!neutral) stark += defects[i].defect.d_stark;
      if (b.kind[i] == 2) flip.drives.push_back(Drive{DriveTarget::DarkSpin, i, 0.0, omega, 0.0});
    }
    SpinRegister base = SpinRegister::prepare(couplings, pols);
    base.probe_static_detuning = stark;
    base = evolve(base, probe_pulse(omega, 0.25, 0.0));
    for (std::size_t j = 0; j < tau.size(); ++j) {
      if (!(tau[j] >= 0.0)) throw DomainError("delay must be non-negative");
      SpinRegister reg = evolve(base, DelaySegment{0.5 * tau[j]});
      reg = evolve(reg, flip);
      reg = evolve(reg, DelaySegment{0.5 * tau[j]});
      const double s0 = evolve(reg, probe_pulse(omega, 0.25, 0.0)).probe_polarization();
      const double s90 = evolve(reg, probe_pulse(omega, 0.25, -0.5 * constants::pi)).probe_polarization();
      curve.signal[j] += b.weight * Complex(s0, s90);
    }
  }
  for (std::size_t j = 0; j < tau.size(); ++j)
    curve.signal[j] *= background_decay(tau[j], probe.gamma_bg, probe.stretch_n);
  return curve;
}

// ---------------------------------------------------------------------------------------

void PumpProbeSequence::validate() const {
  if (!readout) throw SequenceError("pump-probe sequence has no readout stage");
  if (!(spin_lock_duration >= 0.0)) throw SequenceError("spin-lock duration must be non-negative");
  if (!(rabi > 0.0)) throw SequenceError("spin-lock Rabi rate must be positive");
  if (!(readout->tau_p >= 0.0)) throw SequenceError("readout probe time must be non-negative");
  if (!(readout->probe_rabi_factor > 0.0)) throw SequenceError("readout Rabi factor must be positive");
  if (repolarize) validate_segment(*repolarize);
  if (reset) validate_segment(*reset);
  for (const auto& s : evolution) validate_segment(s);
}

PumpProbeRecord run_pump_probe(const PumpProbeSequence& seq, const SpinRegister& reg_in) {
  seq.validate();
  reg_in.validate();
  const int k = reg_in.n_dark;
  const int nq = k + 1;
  const double omega = seq.rabi;
  const double half_pi = 0.5 * constants::pi;
  auto step = [&](const SpinRegister& r, const PulseSegment& s) { return evolve(r, s, seq.dt_max); };
  auto dark_drives = [&](double rabi, double phase) {
    std::vector<Drive> d;
    for (int i = 0; i < k; ++i) d.push_back(Drive{DriveTarget::DarkSpin, i, 0.0, rabi, phase});
    return d;
  };

  PumpProbeRecord rec;
  rec.p_dark.assign(k, 0.0);
  rec.p_dark_readout.assign(k, 0.0);
  for (int sign : {+1, -1}) {
    const double s = static_cast<double>(sign);
    SpinRegister reg = reg_in;
    // +X leaves the probe along -y, -X along +y; both are locked by a +Y drive
    reg = step(reg, probe_pulse(omega, 0.25, sign > 0 ? 0.0 : constants::pi));
    MicrowaveSegment lock{dark_drives(omega, half_pi), seq.spin_lock_duration, seq.secular_spin_lock};
    lock.drives.push_back(Drive{DriveTarget::Probe, 0, 0.0, omega, half_pi});
    reg = step(reg, lock);

    rec.p_probe += -s * 0.5 * 2.0 * real_expectation(reg.state, embed(nq, 0, pauli_half('y')));
    for (int i = 0; i < k; ++i)
      rec.p_dark[i] += -s * 0.5 * 2.0 * real_expectation(reg.state, embed(nq, i + 1, pauli_half('y')));

    // map the dark lock-axis polarization onto z: -y -> +z
    reg = step(reg, MicrowaveSegment{dark_drives(omega, constants::pi), 0.25 / omega, false});
    reg = seq.repolarize ? step(reg, *seq.repolarize) : reset_probe(reg);
    for (const auto& segment : seq.evolution) reg = step(reg, segment);
    for (int i = 0; i < k; ++i) rec.p_dark_readout[i] += s * 0.5 * reg.dark_polarization(i);

    // out-of-phase DEER with the probe at a mismatched Rabi rate
    const double probe_rabi = seq.readout->probe_rabi_factor * omega;
    reg = step(reg, probe_pulse(probe_rabi, 0.25, 0.0));
    reg = step(reg, DelaySegment{0.5 * seq.readout->tau_p});
    MicrowaveSegment both{dark_drives(omega, 0.0), 0.0, false};
    both.drives.push_back(Drive{DriveTarget::Probe, 0, 0.0, probe_rabi, 0.0});
    const double probe_pi = 0.5 / probe_rabi;
    const double dark_pi = 0.5 / omega;
    both.duration = std::min(probe_pi, dark_pi);
    reg = step(reg, both);
    if (dark_pi > probe_pi) {
      reg = step(reg, MicrowaveSegment{dark_drives(omega, 0.0), dark_pi - probe_pi, false});
    } else if (probe_pi > dark_pi) {
      reg = step(reg, probe_pulse(probe_rabi, 0.5 - dark_pi * probe_rabi, 0.0));
    }
    reg = step(reg, DelaySegment{0.5 * seq.readout->tau_p});
    reg = step(reg, probe_pulse(probe_rabi, 0.25, -half_pi));
    rec.s_pi2 += s * 0.5 * reg.probe_polarization();
  }
  return rec;
}

PumpProbeRecord run_pump_probe(const PumpProbeSequence& sequence, std::span<const NsDefect> defects) {
  if (defects.empty() || defects.size() > 3) throw DomainError("pump-probe simulation supports 1 to 3 dark spins");
  const auto configs = charge_configurations(defects);
  const int k = static_cast<int>(defects.size());
  PumpProbeRecord total;
  total.p_dark.assign(k, 0.0);
  total.p_dark_readout.assign(k, 0.0);
  for (const auto& cfg : configs) {
    if (cfg.weight <= 0.0) continue;
    std::vector<double> couplings(k), zeros(k, 0.0);
    double stark = 0.0;
    for (int i = 0; i < k; ++i) {
      const bool neutral = (cfg.neutral_mask >> i) & 1u;
      couplings[i] = neutral ? defects[i].a_dipolar : 0.0;
      if (!neutral) stark += defects[i].d_stark;
    }
    SpinRegister reg = SpinRegister::prepare(couplings, zeros);
    reg.probe_static_detuning = stark;
    const auto rec = run_pump_probe(sequence, reg);
    total.p_probe += cfg.weight * rec.p_probe;
    total.s_pi2 += cfg.weight * rec.s_pi2;
    for (int i = 0; i < k; ++i) {
      if (!((cfg.neutral_mask >> i) & 1u)) continue;
      total.p_dark[i] += cfg.weight * rec.p_dark[i];
      total.p_dark_readout[i] += cfg.weight * rec.p_dark_readout[i];
    }
  }
  return total;
}

}  // namespace spinprobe
