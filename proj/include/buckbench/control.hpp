#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "buckbench/model.hpp"

// Cycle-by-cycle modulators: open-loop duty, voltage-mode PWM, peak
// current-mode PWM, hysteretic burst skipping, and synchronous dead-time
// sequencing.
namespace buckbench::control {

// Switch drive over one interval of a cycle. high_side and low_side are
// never simultaneously on. valid_until is relative to the cycle start.
struct SwitchCommand {
    bool high_side = false;
    bool low_side = false;
    double valid_until = 0.0; // [s]
};

// Per-run controller housekeeping; owned by a single simulation.
struct ControllerState {
    double integrator = 0.0;  // error integral [V s]
    bool burst_active = true; // currently running (not skipping) cycles
    double last_clock = 0.0;  // start time of the current cycle [s]
};

namespace detail {
// Anti-windup: keep ki*integrator within one ramp span beyond either rail so
// the loop unwinds quickly after saturation.
inline void clamp_integrator(const ControlConfig& cfg, ControllerState& st,
                             double lo, double hi) {
    if (cfg.ki <= 0.0) return;
    st.integrator = std::clamp(st.integrator, lo / cfg.ki, hi / cfg.ki);
}
} // namespace detail

// PI voltage loop sampled once per switching period: updates the integrator
// and maps the control voltage onto the PWM ramp. Saturates at 0 and 1.
inline double voltage_mode_duty(double vo, const ControlConfig& cfg,
                                ControllerState& st, double dt) {
    const double e = cfg.Vref - vo * cfg.fb_ratio;
    st.integrator += e * dt;
    detail::clamp_integrator(cfg, st, cfg.ramp_valley - cfg.Vramp_pp,
                             cfg.ramp_valley + 2.0 * cfg.Vramp_pp);
    const double vctrl = cfg.kp * e + cfg.ki * st.integrator;
    return std::clamp((vctrl - cfg.ramp_valley) / cfg.Vramp_pp, 0.0, 1.0);
}

// Outer PI loop of the current-mode scheme: produces the peak command in
// amps, clamped to [0, ipk_max]. A fixed cfg.ipk_cmd > 0 bypasses the loop.
inline double current_command(double vo, const ControlConfig& cfg,
                              ControllerState& st, double dt) {
    if (cfg.ipk_cmd > 0.0) return cfg.ipk_cmd;
    const double e = cfg.Vref - vo * cfg.fb_ratio;
    st.integrator += e * dt;
    detail::clamp_integrator(cfg, st, -cfg.ipk_max, 2.0 * cfg.ipk_max);
    return std::clamp(cfg.kp * e + cfg.ki * st.integrator, 0.0, cfg.ipk_max);
}

// Peak current-mode timing for one cycle: the high side turns off when
// iL(t) + slope_comp*t crosses ipk_cmd. If the threshold is never reached
// within Ts the cycle saturates at D = 1.
inline TimingSolution current_mode_cycle(const std::function<double(double)>& iL_of_t,
                                         double ipk_cmd, const ControlConfig& cfg,
                                         double Ts) {
    const double se = std::max(cfg.slope_comp, 0.0);
    const auto residual = [&](double t) { return iL_of_t(t) + se * t - ipk_cmd; };

    if (residual(0.0) >= 0.0) return make_timing(0.0, 1.0, Ts);

    constexpr int kScan = 4096;
    double t_lo = 0.0, t_hi = -1.0;
    for (int i = 1; i <= kScan; ++i) {
        const double t = Ts * i / kScan;
        if (residual(t) >= 0.0) {
            t_hi = t;
            break;
        }
        t_lo = t;
    }
    if (t_hi < 0.0) return make_timing(1.0, 0.0, Ts);

    for (int i = 0; i < 60 && t_hi - t_lo > 1e-12 * Ts; ++i) {
        const double mid = 0.5 * (t_lo + t_hi);
        (residual(mid) >= 0.0 ? t_hi : t_lo) = mid;
    }
    const double D = 0.5 * (t_lo + t_hi) / Ts;
    return make_timing(D, 1.0 - D, Ts);
}

enum class BurstDecision { RunCycle, SkipCycle };

// Hysteretic cycle gate: skip once the scaled output exceeds Vref + hyst,
// resume once it falls below Vref - hyst, hold the previous decision inside
// the band.
inline BurstDecision burst_decision(double vo, const ControlConfig& cfg,
                                    ControllerState& st) {
    const double v = vo * cfg.fb_ratio;
    if (v > cfg.Vref + cfg.burst_hyst)
        st.burst_active = false;
    else if (v < cfg.Vref - cfg.burst_hyst)
        st.burst_active = true;
    return st.burst_active ? BurstDecision::RunCycle : BurstDecision::SkipCycle;
}

struct SyncSequence {
    std::vector<SwitchCommand> commands; // contiguous intervals covering [0, Ts)
    bool min_on_violation = false;       // commanded on-time shorter than 2*dead_time
};

// Complementary drive with dead-time gaps at both edges:
// high [0, TON), gap, low [TON+dt, Ts-dt), gap. A commanded on-time below
// 2*dead_time suppresses the high side for the cycle (flagged, not fatal).
inline SyncSequence sequence_synchronous(double d_cmd, const ControlConfig& cfg,
                                         double Ts) {
    SyncSequence seq;
    const double dt = cfg.dead_time;
    const double ton = std::clamp(d_cmd, 0.0, 1.0) * Ts;
    auto emit = [&seq](bool hs, bool ls, double until) {
        const double start = seq.commands.empty() ? 0.0 : seq.commands.back().valid_until;
        if (until <= start) return; // drop empty intervals
        seq.commands.push_back({hs, ls, until});
    };

    if (ton < 2.0 * dt) {
        seq.min_on_violation = ton > 0.0;
        emit(false, false, dt);
        emit(false, true, Ts);
        return seq;
    }
    emit(true, false, ton);
    if (ton < Ts) {
        emit(false, false, std::min(ton + dt, Ts));
        if (ton + dt < Ts - dt) {
            emit(false, true, Ts - dt);
            emit(false, false, Ts);
        } else {
            emit(false, false, Ts);
        }
    }
    return seq;
}

} // namespace buckbench::control
