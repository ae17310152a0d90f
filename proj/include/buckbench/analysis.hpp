#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "buckbench/model.hpp"

// Closed-form steady-state relationships of the buck power stage:
// CCM ripple and conversion ratio with conduction losses, the ideal DCM
// solution, and the K = 2L/(R*Ts) conduction-mode boundary.
namespace buckbench::analysis {

// Ideal CCM conversion ratio, all losses ignored: Vo = Vi * D.
inline double vo_ccm_ideal(double Vi, double D) {
    return Vi * D;
}

// CCM output voltage for an externally supplied average inductor current:
// Vo = (Vi - IL*RDSon_hs)*D - Vd*(1-D) - IL*RL. No load-law closure.
inline double vo_ccm_lossy_at(const ConverterParams& p, double D, double IL) {
    return (p.Vi - IL * p.RDSon_hs) * D - p.Vd * (1.0 - D) - IL * p.RL;
}

// CCM output voltage closed with the load law IL = Vo/R. The relation is
// linear in Vo: Vo * (1 + (RL + D*RDSon_hs)/R) = Vi*D - Vd*(1-D).
// Clamped to 0 when the applied volt-seconds cannot sustain a positive output.
inline double vo_ccm_lossy(const ConverterParams& p, double D) {
    const double rhs = p.Vi * D - p.Vd * (1.0 - D);
    if (rhs <= 0.0) return 0.0;
    return rhs / (1.0 + (p.RL + D * p.RDSon_hs) / p.R);
}

// Inductor current rise over TON at average current IL, with the output held
// at the self-consistent CCM value for the same duty.
inline double ripple_on(const ConverterParams& p, double D, double IL) {
    if (D == 0.0) return 0.0;
    const double vo = vo_ccm_lossy(p, D);
    const double applied = (p.Vi - IL * p.RDSon_hs - IL * p.RL) - vo;
    const double d_il = applied * (D * p.Ts()) / p.L;
    if (d_il < 0.0)
        throw InfeasibleOperatingPoint(
            "applied ON-state volt-seconds are non-positive at this operating point");
    return d_il;
}

// Inductor current fall over TOFF = (1-D)*Ts at average current IL.
inline double ripple_off(const ConverterParams& p, double D, double IL) {
    const double vo = vo_ccm_lossy(p, D);
    return (vo + p.Vd + IL * p.RL) * ((1.0 - D) * p.Ts()) / p.L;
}

// Duty cycle that produces Vo_target in CCM with IL = Vo_target/R.
inline double duty_for_vo(const ConverterParams& p, double Vo_target) {
    const double D = (Vo_target * (1.0 + p.RL / p.R) + p.Vd) /
                     (p.Vi - Vo_target * p.RDSon_hs / p.R + p.Vd);
    if (D < 0.0 || D > 1.0)
        throw UnreachableTarget("Vo target requires duty outside [0,1]");
    return D;
}

// Dimensionless conduction parameter K = 2L/(R*Ts).
inline double k_param(const ConverterParams& p) {
    return 2.0 * p.L / (p.R * p.Ts());
}

// DCM iff K < 1 - D; the boundary K = 1 - D is classified CCM.
inline ConductionMode conduction_mode(const ConverterParams& p, double D) {
    return k_param(p) < 1.0 - D ? ConductionMode::DCM : ConductionMode::CCM;
}

// Ideal DCM conversion ratio: Vo = Vi * 2 / (1 + sqrt(1 + 4K/D^2)).
inline double vo_dcm(const ConverterParams& p, double D) {
    if (D == 0.0) return 0.0;
    const double K = k_param(p);
    return p.Vi * 2.0 / (1.0 + std::sqrt(1.0 + 4.0 * K / (D * D)));
}

// Forward form of the DCM voltage relation for a given freewheel fraction:
// Vo = Vi * D / (D + D2).
inline double vo_from_duty_split(double Vi, double D, double D2) {
    if (D == 0.0) return 0.0;
    return Vi * D / (D + D2);
}

// DCM period decomposition: D2 = D*(Vi - Vo)/Vo, D3 the idle remainder.
inline TimingSolution dcm_timing(const ConverterParams& p, double D) {
    if (D == 0.0) return make_timing(0.0, 0.0, p.Ts());
    const double vo = vo_dcm(p, D);
    double D2 = D * (p.Vi - vo) / vo;
    D2 = std::min(D2, 1.0 - D); // guard rounding at the mode boundary
    return make_timing(D, D2, p.Ts());
}

struct DcmCurrents {
    double Ipk; // peak inductor current [A]
    double Io;  // mean output current [A]
};

// Ideal DCM peak current Ipk = (Vi - Vo)*D*Ts/L and period-average output
// current Io = (Ipk/2)*(D + D2).
inline DcmCurrents dcm_peak_and_current(const ConverterParams& p, double D) {
    if (D == 0.0) return {0.0, 0.0};
    const double vo = vo_dcm(p, D);
    const TimingSolution t = dcm_timing(p, D);
    const double ipk = (p.Vi - vo) * D * p.Ts() / p.L;
    return {ipk, ipk / 2.0 * (t.D + t.D2)};
}

// Full analytical steady-state report at duty D; dispatches on the
// conduction mode. The analytical path carries no efficiency figure.
inline SteadyStateReport steady_state(const ConverterParams& p, double D) {
    SteadyStateReport r;
    r.K = k_param(p);
    r.mode = conduction_mode(p, D);
    if (r.mode == ConductionMode::CCM) {
        r.Vo_avg = vo_ccm_lossy(p, D);
        r.Io = r.Vo_avg / p.R;
        r.dIL = ripple_on(p, D, r.Io);
        r.Ipk = r.Io + r.dIL / 2.0;
        r.timing = make_timing(D, 1.0 - D, p.Ts());
    } else {
        r.Vo_avg = vo_dcm(p, D);
        r.Io = r.Vo_avg / p.R;
        r.timing = dcm_timing(p, D);
        const DcmCurrents c = dcm_peak_and_current(p, D);
        r.Ipk = c.Ipk;
        r.dIL = c.Ipk; // current starts from zero each cycle
    }
    return r;
}

} // namespace buckbench::analysis
