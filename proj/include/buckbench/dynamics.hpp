#pragma once

#include <array>
#include <cmath>

#include "buckbench/model.hpp"

// Piecewise-linear circuit equations of the power stage for each conduction
// state, the ESR output relation, and the residuals the integrator roots on.
namespace buckbench::dynamics {

struct Derivative {
    double diL_dt = 0.0; // [A/s]
    double dvC_dt = 0.0; // [V/s]
};

// Which device carries the inductor current. Richer than ConductionState:
// the engine needs the body-diode variants during dead time and burst skip.
enum class SwitchPath {
    HighFet,  // high-side switch on
    LowFet,   // low-side switch on (synchronous freewheel)
    LowDiode, // freewheel diode / low-side body diode, iL > 0
    HighDiode,// high-side body diode returning iL < 0 to the input
    None      // everything blocking, iL pinned at zero
};

// Terminal voltage for a load conductance G (supports G = 0, open load):
// vo = (vC + RC*iL) / (1 + RC*G).
inline double output_voltage_g(double iL, double vC, double RC, double G) {
    return (vC + RC * iL) / (1.0 + RC * G);
}

// Terminal voltage behind the ESR divider against the load R.
// iL is forced to zero in Idle.
inline double output_voltage(const PlantState& s, const ConverterParams& p) {
    const double iL = s.cond == ConductionState::Idle ? 0.0 : s.iL;
    return output_voltage_g(iL, s.vC, p.RC, 1.0 / p.R);
}

// State derivative for an explicit switch path and load conductance.
inline Derivative rhs(double iL, double vC, SwitchPath path,
                      const ConverterParams& p, double G) {
    if (path == SwitchPath::None) {
        const double vo = output_voltage_g(0.0, vC, p.RC, G);
        return {0.0, -vo * G / p.C};
    }
    const double vo = output_voltage_g(iL, vC, p.RC, G);
    double diL = 0.0;
    switch (path) {
        case SwitchPath::HighFet:
            diL = (p.Vi - iL * (p.RDSon_hs + p.RL) - vo) / p.L;
            break;
        case SwitchPath::LowFet:
            diL = (-iL * (p.RDSon_ls + p.RL) - vo) / p.L;
            break;
        case SwitchPath::LowDiode:
            diL = (-p.Vd - iL * p.RL - vo) / p.L;
            break;
        case SwitchPath::HighDiode:
            diL = (p.Vi + p.Vd - iL * p.RL - vo) / p.L;
            break;
        default:
            break;
    }
    return {diL, (iL - vo * G) / p.C};
}

// State derivative for a plant state. The Off path is the diode for the
// asynchronous topology and the low-side switch for the synchronous one;
// Idle is only legal asynchronously (burst skip goes through the engine's
// explicit switch paths).
inline Derivative derivative(const PlantState& s, const ConverterParams& p) {
    SwitchPath path;
    switch (s.cond) {
        case ConductionState::On:
            path = SwitchPath::HighFet;
            break;
        case ConductionState::Off:
            path = p.topology == Topology::Asynchronous ? SwitchPath::LowDiode
                                                        : SwitchPath::LowFet;
            break;
        default:
            if (p.topology == Topology::Synchronous)
                throw InconsistentState("Idle state is not reachable in a synchronous "
                                        "topology outside burst skip");
            path = SwitchPath::None;
            break;
    }
    return rhs(s.cond == ConductionState::Idle ? 0.0 : s.iL, s.vC, path, p, 1.0 / p.R);
}

// Signed event residuals. Zero crossings mark:
//   [0] iL reaching zero while freewheeling (Idle transition, asynchronous);
//   [1] iL reaching the control-supplied peak command.
// Both are continuous within a conduction state.
inline std::array<double, 2> event_functions(const PlantState& s,
                                             const ConverterParams& /*p*/,
                                             double ipk_cmd = 0.0) {
    return {s.iL, s.iL - ipk_cmd};
}

} // namespace buckbench::dynamics
