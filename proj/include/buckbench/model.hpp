#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>

#include "buckbench/errors.hpp"

namespace buckbench {

// Freewheel realization of the power stage (Fig-1.2-style schematic).
enum class Topology {
    Asynchronous, // catch diode with forward drop Vd; inductor current never reverses
    Synchronous   // low-side switch with on-resistance RDSon_ls; negative current allowed
};

// Which device carries the inductor current right now.
enum class ConductionState {
    On,  // high side conducting, freewheel path blocked
    Off, // freewheel path conducting (diode or low-side switch)
    Idle // both off, inductor current held at exactly zero
};

// Modulator selection.
enum class Scheme {
    OpenLoopDuty, // fixed duty from ControlConfig::duty
    VoltageMode,  // PI error amp against a sawtooth ramp
    CurrentMode,  // peak current command, PI outer loop unless ipk_cmd is fixed
    Burst         // hysteretic cycle skipping; run cycles use peak current mode
};

enum class ConductionMode { CCM, DCM };

inline const char* to_string(Topology t) {
    return t == Topology::Asynchronous ? "Asynchronous" : "Synchronous";
}
inline const char* to_string(ConductionState c) {
    switch (c) {
        case ConductionState::On: return "On";
        case ConductionState::Off: return "Off";
        default: return "Idle";
    }
}
inline const char* to_string(Scheme s) {
    switch (s) {
        case Scheme::OpenLoopDuty: return "OpenLoopDuty";
        case Scheme::VoltageMode: return "VoltageMode";
        case Scheme::CurrentMode: return "CurrentMode";
        default: return "Burst";
    }
}
inline const char* to_string(ConductionMode m) {
    return m == ConductionMode::CCM ? "CCM" : "DCM";
}

// Electrical parameters of the power stage plus the loss model knobs.
// All SI units.
struct ConverterParams {
    double Vi = 3.6;        // input voltage [V]
    double L = 10e-6;       // inductance [H]
    double C = 22e-6;       // output capacitance [F]
    double RL = 0.0;        // inductor DC resistance [ohm]
    double RC = 0.0;        // capacitor ESR [ohm]
    double R = 6.0;         // load resistance [ohm]
    double Vd = 0.0;        // diode forward drop [V]
    double RDSon_hs = 0.0;  // high-side switch on-resistance [ohm]
    double RDSon_ls = 0.0;  // low-side switch on-resistance [ohm] (synchronous)
    double fs = 500e3;      // switching frequency [Hz]
    double Iq = 35e-6;      // controller quiescent current [A], drawn from Vi
    Topology topology = Topology::Asynchronous;

    // Switching-loss model: voltage/current overlap at the edges plus gate drive.
    double tr = 5e-9;           // turn-on overlap time [s]
    double tf = 5e-9;           // turn-off overlap time [s]
    double gate_energy = 1e-9;  // gate-drive energy per period [J]
    bool soft_switching = false; // zeroes the overlap term

    double Ts() const { return 1.0 / fs; }
};

// Throws ValidationError naming the first violated invariant; returns params unchanged.
inline ConverterParams validate(const ConverterParams& p) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValidationError(std::string(name) + " must be positive");
    };
    auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ValidationError(std::string(name) + " must be non-negative");
    };
    positive(p.Vi, "Vi");
    positive(p.L, "L");
    positive(p.C, "C");
    positive(p.R, "R");
    positive(p.fs, "fs");
    non_negative(p.RL, "RL");
    non_negative(p.RC, "RC");
    non_negative(p.Vd, "Vd");
    non_negative(p.RDSon_hs, "RDSon_hs");
    non_negative(p.RDSon_ls, "RDSon_ls");
    non_negative(p.Iq, "Iq");
    non_negative(p.tr, "tr");
    non_negative(p.tf, "tf");
    non_negative(p.gate_energy, "gate_energy");
    if (!std::isfinite(p.Ts()) || !(p.Ts() > 0.0))
        throw ValidationError("Ts must be finite and positive");
    return p;
}

// Instantaneous state of the power stage. vC is the voltage behind the ESR;
// the terminal voltage is the algebraic output of dynamics::output_voltage.
struct PlantState {
    double iL = 0.0; // inductor current [A]
    double vC = 0.0; // capacitor internal voltage [V]
    double t = 0.0;  // time [s]
    ConductionState cond = ConductionState::Idle;
};

// Duty-cycle decomposition of one switching period.
// D + D2 + D3 == 1 to 1e-12 after construction.
struct TimingSolution {
    double D = 0.0;   // switch-on fraction
    double D2 = 0.0;  // freewheel fraction
    double D3 = 0.0;  // idle fraction
    double Ts = 0.0;  // period [s]
    double TON = 0.0;
    double TOFF = 0.0;
};

inline TimingSolution make_timing(double D, double D2, double Ts) {
    TimingSolution t;
    t.D = D;
    t.D2 = D2;
    t.D3 = 1.0 - D - D2;
    if (std::abs(t.D3) < 1e-12) t.D3 = 0.0; // absorb rounding at the CCM boundary
    if (t.D < 0.0 || t.D2 < 0.0 || t.D3 < 0.0 ||
        std::abs(t.D + t.D2 + t.D3 - 1.0) > 1e-12)
        throw ValidationError("timing fractions must be non-negative and sum to 1");
    t.Ts = Ts;
    t.TON = D * Ts;
    t.TOFF = D2 * Ts;
    return t;
}

// Analytical or measured steady-state quantities.
struct SteadyStateReport {
    double Vo_avg = 0.0; // mean output voltage [V]
    double dIL = 0.0;    // peak-to-peak inductor ripple [A]
    double Ipk = 0.0;    // peak inductor current [A]
    double Io = 0.0;     // mean output current [A]
    double K = 0.0;      // conduction parameter 2L/(R*Ts)
    ConductionMode mode = ConductionMode::CCM;
    TimingSolution timing;
    std::optional<double> efficiency; // only present for measured reports
};

// Modulator selection and parameters. slope_comp < 0 requests the default
// compensation ramp of one Off-slope, Vo_target/L, resolved at run time.
struct ControlConfig {
    Scheme scheme = Scheme::VoltageMode;
    double duty = 0.5;          // D for OpenLoopDuty
    double Vref = 1.23;         // reference voltage [V]
    double Vramp_pp = 6.0;      // PWM ramp peak-to-peak amplitude [V]
    double ramp_valley = 0.0;   // PWM ramp minimum [V]
    double kp = 0.5;            // proportional gain [1/V]
    double ki = 2e4;            // integral gain [1/(V s)]
    double slope_comp = -1.0;   // compensation ramp slope [A/s]; <0 = auto
    double burst_hyst = 0.0123; // hysteresis half-band [V] (1% of Vref)
    double dead_time = 20e-9;   // synchronous dead time [s]
    double fb_ratio = 1.23 / 1.8; // output divider, Vo_target * fb_ratio == Vref
    double ipk_cmd = 0.0;       // fixed peak command [A]; 0 = closed outer loop
    double burst_ipk = 0.5;     // peak command for burst run cycles [A]
    double ipk_max = 2.0;       // outer-loop current command clamp [A]

    double vo_target() const { return Vref / fb_ratio; }
};

inline ControlConfig validate(const ControlConfig& c, double Ts) {
    if (!(c.Vramp_pp > 0.0)) throw ValidationError("Vramp_pp must be positive");
    if (!(c.Vref > 0.0)) throw ValidationError("Vref must be positive");
    if (!(c.fb_ratio > 0.0 && c.fb_ratio <= 1.0))
        throw ValidationError("fb_ratio must be in (0,1]");
    if (c.scheme == Scheme::Burst && !(c.burst_hyst > 0.0))
        throw ValidationError("burst_hyst must be positive");
    if (!(c.dead_time >= 0.0) || !(c.dead_time < Ts / 2.0))
        throw ValidationError("dead_time must be in [0, Ts/2)");
    if (c.scheme == Scheme::OpenLoopDuty && !(c.duty >= 0.0 && c.duty <= 1.0))
        throw ValidationError("duty must be in [0,1]");
    if (!(c.ipk_max > 0.0)) throw ValidationError("ipk_max must be positive");
    if (c.ipk_cmd < 0.0) throw ValidationError("ipk_cmd must be non-negative");
    if (c.burst_ipk < 0.0) throw ValidationError("burst_ipk must be non-negative");
    return c;
}

// Effective slope compensation in A/s after resolving the auto default.
inline double resolved_slope_comp(const ControlConfig& c, const ConverterParams& p) {
    return c.slope_comp >= 0.0 ? c.slope_comp : c.vo_target() / p.L;
}

} // namespace buckbench
