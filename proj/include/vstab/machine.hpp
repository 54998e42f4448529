#pragma once

namespace vstab {

/// IEEE DC1-style exciter without limits or saturation. Four states:
/// measurement lag, amplifier, exciter output and rate-feedback stabilizer.
struct AvrParams {
  double ka = 20.0;   // amplifier gain
  double ta = 0.2;    // amplifier time constant [s]
  double ke = 1.0;    // exciter self-excitation constant
  double te = 0.314;  // exciter time constant [s]
  double kf = 0.063;  // stabilizer gain
  double tf = 0.35;   // stabilizer time constant [s]
  double tr = 0.02;   // measurement time constant [s]
};

/// Droop governor with servo, steam chest and reheater (lead-lag). Three
/// states.
struct GovernorParams {
  double r = 0.05;   // droop [p.u. speed / p.u. power, machine base]
  double ts = 0.2;   // servo time constant [s]
  double tc = 0.3;   // steam chest time constant [s]
  double t3 = 2.0;   // reheat lead [s]
  double t5 = 7.0;   // reheat lag [s]
};

/// Two-axis synchronous machine with its controls. Reactances, inertia,
/// damping and droop are on the machine's own `mva` base, as written in case
/// files; the DAE assembly converts them to the system base.
struct MachineModel {
  int bus = 0;
  double generation = 0.0;  // scheduled active power [p.u.]
  double mva = 100.0;       // rating used for base conversion on load
  double h = 6.4;           // inertia constant [s]
  double damping = 2.0;     // [p.u. power / p.u. speed]
  double xd = 0.8958;
  double xq = 0.8645;
  double xd1 = 0.1198;  // x'_d
  double xq1 = 0.1969;  // x'_q
  double td01 = 6.0;    // T'_d0 [s]
  double tq01 = 0.535;  // T'_q0 [s]
  AvrParams avr;
  GovernorParams gov;
};

constexpr int kMachineStates = 4;
constexpr int kAvrStates = 4;
constexpr int kGovernorStates = 3;
constexpr int kStatesPerUnit = kMachineStates + kAvrStates + kGovernorStates;

}  // namespace vstab
