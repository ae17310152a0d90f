#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "buckbench/analysis.hpp"
#include "buckbench/control.hpp"
#include "buckbench/dynamics.hpp"
#include "buckbench/model.hpp"

// Event-driven time-domain integration of the switched power stage under a
// chosen modulator: fixed-step RK4 inside each conduction segment, bisection
// localization of zero crossings and peak-command trips, cycle-map steady
// state detection with Newton acceleration, and measurement extraction.
namespace buckbench::engine {

enum class RunMode { CCM, DCM, Burst };

inline const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::CCM: return "CCM";
        case RunMode::DCM: return "DCM";
        default: return "Burst";
    }
}

struct TraceSample {
    double t = 0.0;
    double iL = 0.0;
    double vC = 0.0;
    double vo = 0.0;
    double duty = 0.0; // realized high-side fraction of the sample's cycle
    ConductionState cond = ConductionState::Idle;
};

struct Trace {
    std::vector<TraceSample> samples;
    double sample_period = 0.0; // nominal spacing between recorded samples [s]
};

struct Metrics {
    double Vo_avg = 0.0;
    double Vo_ripple_pp = 0.0;
    double vC_ripple_pp = 0.0;
    double iL_ripple_pp = 0.0;
    double Ipk = 0.0;
    double iL_min = 0.0;
    double Io = 0.0;
    double efficiency = 0.0;
    RunMode mode = RunMode::CCM;
    double load_regulation = std::numeric_limits<double>::quiet_NaN(); // [V/A]
    double line_regulation = std::numeric_limits<double>::quiet_NaN(); // [V/V]
    double settle_time = std::numeric_limits<double>::quiet_NaN();     // [s]
    bool load_regulation_defined = false;

    // period decomposition measured over the window, as fractions of it
    double D_measured = 0.0;
    double D2_measured = 0.0;
    double D3_measured = 0.0;

    // power bookkeeping over the window
    double Pin = 0.0;  // total input power incl. quiescent and switching [W]
    double Pout = 0.0; // mean vo^2 * G [W]
    double Pq = 0.0;   // Vi * Iq [W]
    double Psw = 0.0;  // switching-loss model [W]
    double P_RL = 0.0, P_RDS = 0.0, P_Vd = 0.0, P_RC = 0.0;
    double audit_residual_rel = 0.0; // conduction energy balance, rel. to Pin

    double window = 0.0;      // measurement window length [s]
    int switch_cycles = 0;    // cycles that drove the high side in the window
    int periods = 0;          // cycles simulated before the window
    double convergence_residual = 0.0;
    bool min_on_violation = false;
};

struct SimOptions {
    int steps_per_period = 256; // values below 256 are clamped up
    double ss_tol = 1e-6;       // cycle-map convergence tolerance
    int max_periods = 10000;    // steady-state search cap
    int trace_stride = 1;       // record every n-th integration step
    double t_end = 0.0;         // >0 caps the steady-state search duration
};

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Linear conductance ramp; constant outside [t0, t1]. G = 0 is an open load.
struct LoadLaw {
    double G0 = 0.0, G1 = 0.0;
    double t0 = 0.0, t1 = 0.0;
    static LoadLaw constant(double G) { return {G, G, 0.0, 0.0}; }
    double operator()(double t) const {
        if (t1 <= t0) return G1;
        if (t <= t0) return G0;
        if (t >= t1) return G1;
        return G0 + (G1 - G0) * (t - t0) / (t1 - t0);
    }
};

// Quadrature accumulators integrated alongside the state at RK4 order.
struct Accum {
    double vo = 0.0;       // integral of vo
    double io = 0.0;       // integral of vo*G
    double pout = 0.0;     // integral of vo^2*G
    double pin = 0.0;      // integral of Vi*iL while the high side conducts
    double pin_true = 0.0; // pin plus high-side body-diode return current
    double rl = 0.0;       // integral of iL^2*RL
    double rds = 0.0;      // integral of iL^2*RDSon of the conducting switch
    double vd = 0.0;       // integral of |iL|*Vd through either diode
    double rc = 0.0;       // integral of iC^2*RC

    Accum& operator+=(const Accum& o) {
        vo += o.vo; io += o.io; pout += o.pout; pin += o.pin;
        pin_true += o.pin_true; rl += o.rl; rds += o.rds; vd += o.vd; rc += o.rc;
        return *this;
    }
    Accum scaled(double s) const {
        Accum r = *this;
        r.vo *= s; r.io *= s; r.pout *= s; r.pin *= s; r.pin_true *= s;
        r.rl *= s; r.rds *= s; r.vd *= s; r.rc *= s;
        return r;
    }
};

struct AugDeriv {
    double diL = 0.0, dvC = 0.0;
    Accum a;
};

inline AugDeriv aug_rhs(double t, double iL, double vC, dynamics::SwitchPath path,
                        const ConverterParams& p, const LoadLaw& load) {
    using dynamics::SwitchPath;
    if (path == SwitchPath::None) iL = 0.0;
    const double G = load(t);
    const double vo = dynamics::output_voltage_g(iL, vC, p.RC, G);
    const dynamics::Derivative d = dynamics::rhs(iL, vC, path, p, G);

    AugDeriv r;
    r.diL = d.diL_dt;
    r.dvC = d.dvC_dt;
    r.a.vo = vo;
    r.a.io = vo * G;
    r.a.pout = vo * vo * G;
    if (path == SwitchPath::HighFet) {
        r.a.pin = p.Vi * iL;
        r.a.pin_true = r.a.pin;
        r.a.rds = iL * iL * p.RDSon_hs;
    } else if (path == SwitchPath::LowFet) {
        r.a.rds = iL * iL * p.RDSon_ls;
    } else if (path == SwitchPath::LowDiode) {
        r.a.vd = std::abs(iL) * p.Vd;
    } else if (path == SwitchPath::HighDiode) {
        r.a.pin_true = p.Vi * iL; // returning current, negative contribution
        r.a.vd = std::abs(iL) * p.Vd;
    }
    r.a.rl = iL * iL * p.RL;
    const double iC = iL - vo * G;
    r.a.rc = iC * iC * p.RC;
    return r;
}

// Segment kinds the cycle driver schedules. DeadGap resolves its conduction
// path from the sign of the inductor current; FreewheelAsync and LowEmulated
// hand off to Idle at the zero crossing.
enum class Kind { High, Low, LowEmulated, DeadGap, FreewheelAsync };

class Simulator {
public:
    Simulator(const ConverterParams& p, const ControlConfig& c, const SimOptions& o)
        : p_(validate(p)), cfg_(validate(c, p.Ts())), opts_(o) {
        opts_.steps_per_period = std::max(opts_.steps_per_period, 256);
        h_ = p_.Ts() / opts_.steps_per_period;
        slope_ = resolved_slope_comp(cfg_, p_);
        load_ = LoadLaw::constant(1.0 / p_.R);
    }

    struct CycleResult {
        double duty = 0.0;
        bool skipped = false;
        bool saturated = false;
        bool ran_high = false;
        double cycle_ipk = 0.0; // max |iL| seen during the cycle
        double vo_end = 0.0;
    };

    void set_state(double iL, double vC, double t) {
        if (!std::isfinite(iL) || !std::isfinite(vC) || !std::isfinite(t))
            throw DivergenceError("non-finite initial state", t);
        iL_ = iL;
        vC_ = vC;
        t_ = t;
    }
    void set_controller(const control::ControllerState& s) { ctl_ = s; }
    void set_load(const LoadLaw& l) { load_ = l; }
    const LoadLaw& load() const { return load_; }

    double t() const { return t_; }
    double iL() const { return iL_; }
    double vC() const { return vC_; }
    const control::ControllerState& controller() const { return ctl_; }
    const ConverterParams& params() const { return p_; }
    const ControlConfig& config() const { return cfg_; }
    const SimOptions& options() const { return opts_; }
    double step_size() const { return h_; }

    double vo_now() const {
        return dynamics::output_voltage_g(iL_, vC_, p_.RC, load_(t_));
    }
    double stored_energy() const {
        return 0.5 * p_.L * iL_ * iL_ + 0.5 * p_.C * vC_ * vC_;
    }

    void attach_trace(Trace* tr) {
        rec_ = tr;
        if (rec_) {
            rec_->sample_period = h_ * opts_.trace_stride;
            record_sample(iL_ == 0.0 ? ConductionState::Idle : ConductionState::Off);
        }
    }
    void detach_trace() { rec_ = nullptr; }

    void reset_window() {
        acc_ = Accum{};
        t_on_ = t_fw_ = t_idle_ = 0.0;
        il_max_ = -kInf; il_min_ = kInf;
        vo_max_ = -kInf; vo_min_ = kInf;
        vc_max_ = -kInf; vc_min_ = kInf;
        switch_cycles_ = 0;
        skips_ = 0;
        min_on_ = false;
        win_t0_ = t_;
        win_e0_ = stored_energy();
        // fold the current point into the extrema
        touch_extrema();
    }

    const Accum& accum() const { return acc_; }
    double window_length() const { return t_ - win_t0_; }

    // Advances exactly one switching period.
    CycleResult run_cycle() {
        const double Ts = p_.Ts();
        const double t0 = t_;
        const double te = t0 + Ts;
        ctl_.last_clock = t0;
        cycle_t0_ = t0;
        cycle_ton_ = 0.0;
        cycle_ipk_ = std::abs(iL_);
        cycle_first_sample_ = rec_ ? rec_->samples.size() : 0;

        CycleResult res;
        const double vo0 = vo_now();
        switch (cfg_.scheme) {
            case Scheme::OpenLoopDuty:
                duty_cycle(res, cfg_.duty, te);
                break;
            case Scheme::VoltageMode: {
                const double D = control::voltage_mode_duty(vo0, cfg_, ctl_, Ts);
                res.saturated = D <= 0.0 || D >= 1.0;
                duty_cycle(res, D, te);
                break;
            }
            case Scheme::CurrentMode: {
                const double ipk = control::current_command(vo0, cfg_, ctl_, Ts);
                res.saturated = cfg_.ipk_cmd <= 0.0 &&
                                (ipk <= 0.0 || ipk >= cfg_.ipk_max);
                current_cycle(res, ipk, te, false);
                break;
            }
            case Scheme::Burst: {
                if (control::burst_decision(vo0, cfg_, ctl_) ==
                    control::BurstDecision::SkipCycle) {
                    res.skipped = true;
                    ++skips_;
                    run_interval(te, Kind::DeadGap);
                } else {
                    current_cycle(res, cfg_.burst_ipk, te, true);
                }
                break;
            }
        }
        t_ = te; // snap the accumulated step rounding to the exact boundary
        res.duty = cycle_ton_ / Ts;
        res.ran_high = cycle_ton_ > 0.0;
        res.cycle_ipk = cycle_ipk_;
        res.vo_end = vo_now();
        if (res.ran_high) ++switch_cycles_;
        if (rec_) backfill_duty(res.duty);
        return res;
    }

    // Measurement extraction over the window opened by reset_window().
    void fill_metrics(Metrics& m) const {
        const double W = window_length();
        m.window = W;
        if (W <= 0.0) return;
        m.Vo_avg = acc_.vo / W;
        m.Io = acc_.io / W;
        m.Vo_ripple_pp = vo_max_ - vo_min_;
        m.vC_ripple_pp = vc_max_ - vc_min_;
        m.iL_ripple_pp = il_max_ - il_min_;
        m.Ipk = il_max_;
        m.iL_min = il_min_;
        m.D_measured = t_on_ / W;
        m.D2_measured = t_fw_ / W;
        m.D3_measured = t_idle_ / W;
        m.switch_cycles = switch_cycles_;
        m.min_on_violation = min_on_;

        if (cfg_.scheme == Scheme::Burst && skips_ > 0)
            m.mode = RunMode::Burst;
        else
            m.mode = t_idle_ > 1e-9 * W ? RunMode::DCM : RunMode::CCM;

        m.Pout = acc_.pout / W;
        m.Pq = p_.Vi * p_.Iq;
        const double overlap =
            p_.soft_switching ? 0.0 : 0.5 * p_.Vi * std::max(il_max_, 0.0) * (p_.tr + p_.tf);
        m.Psw = (switch_cycles_ / W) * (overlap + p_.gate_energy);
        const double pin_cond = acc_.pin / W;
        m.Pin = pin_cond + m.Pq + m.Psw;
        m.efficiency = m.Pin > 0.0 ? std::clamp(m.Pout / m.Pin, 0.0, 1.0) : 0.0;

        m.P_RL = acc_.rl / W;
        m.P_RDS = acc_.rds / W;
        m.P_Vd = acc_.vd / W;
        m.P_RC = acc_.rc / W;
        const double p_store = (stored_energy() - win_e0_) / W;
        const double residual = acc_.pin_true / W -
                                (m.Pout + m.P_RL + m.P_RDS + m.P_Vd + m.P_RC + p_store);
        const double denom = std::max({std::abs(m.Pin), std::abs(m.Pout), 1e-12});
        m.audit_residual_rel = std::abs(residual) / denom;
    }

    int window_skips() const { return skips_; }

private:
    // --- scheduling ---------------------------------------------------------

    void duty_cycle(CycleResult& res, double D, double te) {
        const double Ts = p_.Ts();
        const double t0 = te - Ts;
        D = std::clamp(D, 0.0, 1.0);
        if (p_.topology == Topology::Asynchronous) {
            if (D > 0.0) run_interval(t0 + D * Ts, Kind::High);
            if (t_ < te) run_interval(te, Kind::FreewheelAsync);
        } else {
            const auto seq = control::sequence_synchronous(D, cfg_, Ts);
            min_on_ = min_on_ || seq.min_on_violation;
            res.saturated = res.saturated || seq.min_on_violation;
            for (const auto& cmd : seq.commands) {
                const Kind k = cmd.high_side ? Kind::High
                             : cmd.low_side ? Kind::Low
                                            : Kind::DeadGap;
                run_interval(t0 + cmd.valid_until, k);
            }
        }
    }

    void current_cycle(CycleResult& res, double ipk, double te, bool diode_emulation) {
        const double t_trip = run_interval(te, Kind::High, ipk);
        if (t_trip >= te) {
            res.saturated = true; // duty railed at 1
            return;
        }
        if (p_.topology == Topology::Asynchronous) {
            run_interval(te, Kind::FreewheelAsync);
            return;
        }
        const double dt = cfg_.dead_time;
        run_interval(std::min(t_trip + dt, te), Kind::DeadGap);
        if (t_trip + dt < te - dt) {
            run_interval(te - dt, diode_emulation ? Kind::LowEmulated : Kind::Low);
            run_interval(te, Kind::DeadGap);
        } else {
            run_interval(te, Kind::DeadGap);
        }
    }

    // --- integration --------------------------------------------------------

    dynamics::SwitchPath resolve_path(Kind k) const {
        using dynamics::SwitchPath;
        switch (k) {
            case Kind::High: return SwitchPath::HighFet;
            case Kind::Low: return SwitchPath::LowFet;
            case Kind::LowEmulated:
                return iL_ == 0.0 ? SwitchPath::None : SwitchPath::LowFet;
            case Kind::FreewheelAsync:
                return iL_ > 0.0 ? SwitchPath::LowDiode : SwitchPath::None;
            default: // DeadGap
                if (iL_ > 0.0) return SwitchPath::LowDiode;
                if (iL_ < 0.0) return SwitchPath::HighDiode;
                return SwitchPath::None;
        }
    }

    static ConductionState cond_of(dynamics::SwitchPath p) {
        using dynamics::SwitchPath;
        if (p == SwitchPath::HighFet) return ConductionState::On;
        if (p == SwitchPath::None) return ConductionState::Idle;
        return ConductionState::Off;
    }

    // Integrates up to tb under the kind's path rules. ipk >= 0 arms the peak
    // trip on a High segment; returns the trip time, or tb if it never fired.
    double run_interval(double tb, Kind kind, double ipk = -1.0) {
        using dynamics::SwitchPath;
        const double teps = 1e-12 * p_.Ts();
        if (ipk >= 0.0) trip_ipk_ = ipk;
        while (t_ < tb - teps) {
            SwitchPath path = resolve_path(kind);
            mark_transition(cond_of(path));

            // asynchronous high side blocks reverse current
            const bool guard_on = path == SwitchPath::HighFet &&
                                  p_.topology == Topology::Asynchronous;
            if (guard_on && iL_ == 0.0) {
                const AugDeriv d = aug_rhs(t_, iL_, vC_, path, p_, load_);
                if (d.diL < 0.0) {
                    mark_transition(ConductionState::Idle);
                    integrate_plain(tb, SwitchPath::None, kind);
                    return tb;
                }
            }

            const bool trip_armed = ipk >= 0.0 && path == SwitchPath::HighFet;
            if (trip_armed && trip_residual(iL_, t_) >= 0.0) {
                return t_; // trips at once, zero-length On
            }

            const bool zero_down = path == SwitchPath::LowDiode ||
                                   (kind == Kind::LowEmulated && path == SwitchPath::LowFet) ||
                                   guard_on;
            const bool zero_up = path == SwitchPath::HighDiode;
            const bool zero_armed = (zero_down || zero_up) &&
                                    kind != Kind::Low; // plain sync low runs free

            if (path == SwitchPath::None) {
                integrate_plain(tb, path, kind);
                return tb;
            }

            const EventHit hit = integrate_seg(tb, path, kind, zero_armed, zero_up,
                                               trip_armed, ipk);
            if (hit == EventHit::Trip) return t_;
            if (hit == EventHit::Zero) {
                iL_ = 0.0;
                mark_transition(ConductionState::Idle);
                if (kind == Kind::High) {
                    // reverse-blocked high side: idle out the rest of the On window
                    integrate_plain(tb, SwitchPath::None, kind);
                    return tb;
                }
                continue; // re-resolve (DeadGap/Freewheel/LowEmulated go idle)
            }
        }
        t_ = tb;
        return tb;
    }

    enum class EventHit { None, Zero, Trip };

    double trip_residual(double iL, double t) const {
        return iL + slope_ * (t - cycle_t0_) - trip_ipk_;
    }

    EventHit integrate_seg(double tb, dynamics::SwitchPath path, Kind kind,
                           bool zero_armed, bool zero_up, bool trip_armed,
                           double ipk) {
        trip_ipk_ = ipk;
        const double teps = 1e-12 * p_.Ts();
        while (t_ < tb - teps) {
            const double h = std::min(h_, tb - t_);
            const auto trial = trial_step(h, path);
            const double iL1 = trial.first;

            if (zero_armed) {
                const double r0 = iL_;
                const double r1 = iL1;
                const bool crossed = zero_up ? (r0 < 0.0 && r1 >= 0.0)
                                             : (r0 > 0.0 && r1 <= 0.0);
                if (crossed) {
                    locate_and_commit(h, path,
                                      [this, zero_up](double iL, double) {
                                          return zero_up ? iL >= 0.0 : iL <= 0.0;
                                      });
                    force_record(cond_of(path));
                    return EventHit::Zero;
                }
            }
            if (trip_armed) {
                const double r0 = trip_residual(iL_, t_);
                const double r1 = trip_residual(iL1, t_ + h);
                if (r0 < 0.0 && r1 >= 0.0) {
                    locate_and_commit(h, path, [this](double iL, double t) {
                        return trip_residual(iL, t) >= 0.0;
                    });
                    force_record(cond_of(path));
                    return EventHit::Trip;
                }
            }
            commit_step(h, path);
        }
        t_ = tb;
        return EventHit::None;
    }

    void integrate_plain(double tb, dynamics::SwitchPath path, Kind) {
        const double teps = 1e-12 * p_.Ts();
        if (path == dynamics::SwitchPath::None) iL_ = 0.0;
        while (t_ < tb - teps) {
            const double h = std::min(h_, tb - t_);
            commit_step(h, path);
        }
        t_ = tb;
    }

    // Bisect the step fraction until the event side is entered, then commit
    // the partial step. Localization window is 1e-7 of the period.
    template <typename Pred>
    void locate_and_commit(double h, dynamics::SwitchPath path, Pred past_event) {
        double lo = 0.0, hi = h;
        const double tol = 1e-7 * p_.Ts();
        for (int i = 0; i < 64 && hi - lo > tol; ++i) {
            const double mid = 0.5 * (lo + hi);
            const auto s = trial_step(mid, path);
            (past_event(s.first, t_ + mid) ? hi : lo) = mid;
        }
        commit_step(hi, path);
    }

    std::pair<double, double> trial_step(double h, dynamics::SwitchPath path) const {
        const AugDeriv k1 = aug_rhs(t_, iL_, vC_, path, p_, load_);
        const AugDeriv k2 = aug_rhs(t_ + 0.5 * h, iL_ + 0.5 * h * k1.diL,
                                    vC_ + 0.5 * h * k1.dvC, path, p_, load_);
        const AugDeriv k3 = aug_rhs(t_ + 0.5 * h, iL_ + 0.5 * h * k2.diL,
                                    vC_ + 0.5 * h * k2.dvC, path, p_, load_);
        const AugDeriv k4 = aug_rhs(t_ + h, iL_ + h * k3.diL, vC_ + h * k3.dvC,
                                    path, p_, load_);
        return {iL_ + h / 6.0 * (k1.diL + 2.0 * k2.diL + 2.0 * k3.diL + k4.diL),
                vC_ + h / 6.0 * (k1.dvC + 2.0 * k2.dvC + 2.0 * k3.dvC + k4.dvC)};
    }

    void commit_step(double h, dynamics::SwitchPath path) {
        const AugDeriv k1 = aug_rhs(t_, iL_, vC_, path, p_, load_);
        const AugDeriv k2 = aug_rhs(t_ + 0.5 * h, iL_ + 0.5 * h * k1.diL,
                                    vC_ + 0.5 * h * k1.dvC, path, p_, load_);
        const AugDeriv k3 = aug_rhs(t_ + 0.5 * h, iL_ + 0.5 * h * k2.diL,
                                    vC_ + 0.5 * h * k2.dvC, path, p_, load_);
        const AugDeriv k4 = aug_rhs(t_ + h, iL_ + h * k3.diL, vC_ + h * k3.dvC,
                                    path, p_, load_);
        iL_ += h / 6.0 * (k1.diL + 2.0 * k2.diL + 2.0 * k3.diL + k4.diL);
        vC_ += h / 6.0 * (k1.dvC + 2.0 * k2.dvC + 2.0 * k3.dvC + k4.dvC);
        if (path == dynamics::SwitchPath::None) iL_ = 0.0;
        Accum inc = k1.a;
        inc += k2.a.scaled(2.0);
        inc += k3.a.scaled(2.0);
        inc += k4.a;
        acc_ += inc.scaled(h / 6.0);
        t_ += h;

        if (!std::isfinite(iL_) || !std::isfinite(vC_))
            throw DivergenceError("state diverged (non-finite iL or vC)", t_);

        // window tallies
        using dynamics::SwitchPath;
        if (path == SwitchPath::HighFet) {
            t_on_ += h;
            cycle_ton_ += h;
        } else if (path == SwitchPath::None) {
            t_idle_ += h;
        } else {
            t_fw_ += h;
        }
        touch_extrema();
        cycle_ipk_ = std::max(cycle_ipk_, std::abs(iL_));

        if (rec_ && ++stride_cnt_ >= opts_.trace_stride) {
            stride_cnt_ = 0;
            record_sample(cond_of(path));
        }
    }

    void touch_extrema() {
        const double vo = vo_now();
        il_max_ = std::max(il_max_, iL_);
        il_min_ = std::min(il_min_, iL_);
        vo_max_ = std::max(vo_max_, vo);
        vo_min_ = std::min(vo_min_, vo);
        vc_max_ = std::max(vc_max_, vC_);
        vc_min_ = std::min(vc_min_, vC_);
    }

    // --- recording ----------------------------------------------------------

    void record_sample(ConductionState cond) {
        last_cond_ = cond;
        if (!rec_) return;
        if (!rec_->samples.empty() && rec_->samples.back().t >= t_) {
            rec_->samples.back().cond = cond;
            return;
        }
        rec_->samples.push_back({t_, iL_, vC_, vo_now(),
                                 std::numeric_limits<double>::quiet_NaN(), cond});
    }

    // Always emit a sample at the current instant (events, interval edges).
    void force_record(ConductionState cond) {
        stride_cnt_ = 0;
        record_sample(cond);
    }

    // Record the entry into a new conduction state; dedupes repeats.
    void mark_transition(ConductionState cond) {
        if (cond == last_cond_) return;
        force_record(cond);
    }

    void backfill_duty(double duty) {
        if (!rec_) return;
        for (size_t i = cycle_first_sample_; i < rec_->samples.size(); ++i)
            rec_->samples[i].duty = duty;
    }

    // --- members -------------------------------------------------------------

    ConverterParams p_;
    ControlConfig cfg_;
    SimOptions opts_;
    double h_ = 0.0;
    double slope_ = 0.0;
    LoadLaw load_;

    double t_ = 0.0, iL_ = 0.0, vC_ = 0.0;
    control::ControllerState ctl_;

    double cycle_t0_ = 0.0, cycle_ton_ = 0.0, cycle_ipk_ = 0.0;
    double trip_ipk_ = 0.0;

    Accum acc_;
    double t_on_ = 0.0, t_fw_ = 0.0, t_idle_ = 0.0;
    double il_max_ = -kInf, il_min_ = kInf;
    double vo_max_ = -kInf, vo_min_ = kInf;
    double vc_max_ = -kInf, vc_min_ = kInf;
    int switch_cycles_ = 0;
    int skips_ = 0;
    bool min_on_ = false;
    double win_t0_ = 0.0, win_e0_ = 0.0;

    Trace* rec_ = nullptr;
    int stride_cnt_ = 0;
    size_t cycle_first_sample_ = 0;
    ConductionState last_cond_ = ConductionState::Idle;
};

// Steady-state search on the cycle map. Open- and closed-loop schemes use
// Picard iteration with damped-Newton acceleration on the (iL, vC[, integ])
// fixed point; burst mode converges on the super-period between successive
// burst starts, whose state repeats only up to the hysteresis quantization,
// so it is judged on the super-period mean output instead.
class SteadyStateDriver {
public:
    explicit SteadyStateDriver(Simulator& sim, bool allow_newton = true)
        : sim_(sim), scheme_(sim.config().scheme), allow_newton_(allow_newton) {
        closed_loop_ = scheme_ == Scheme::VoltageMode ||
                       (scheme_ == Scheme::CurrentMode && sim.config().ipk_cmd <= 0.0);
        dim_ = closed_loop_ ? 3 : 2;
    }

    int periods = 0;
    double residual = kInf;

    void converge(int cap, double tol) {
        if (scheme_ == Scheme::Burst) {
            converge_burst(cap, tol);
            return;
        }
        Vec prev = state_vec();
        int since_newton = 0;
        for (periods = 0; periods < cap; ++periods) {
            const auto r = sim_.run_cycle();
            ipk_scale_ = std::max(r.cycle_ipk, 1e-3);
            vo_scale_ = std::max(std::abs(r.vo_end), 1e-3);
            const Vec cur = state_vec();
            residual = rel_residual(cur, prev);
            prev = cur;
            if (residual < tol) {
                if (allow_newton_) polish();
                return;
            }
            if (allow_newton_ && !r.saturated && ++since_newton >= 16 && periods >= 8) {
                since_newton = 0;
                if (newton_step() < kInf) prev = state_vec();
            }
        }
        throw ConvergenceFailure(
            "steady state not reached within " + std::to_string(cap) +
                " periods (cycle-map residual " + std::to_string(residual) + ")",
            residual);
    }

    // Runs the measurement window and fills metrics; trace may be null.
    void measure(Trace* trace, Metrics& m) {
        m.periods = periods;
        m.convergence_residual = residual;
        sim_.reset_window();
        if (trace) sim_.attach_trace(trace);
        if (scheme_ == Scheme::Burst && super_cycles_ > 0) {
            bool prev_skipped = false;
            const int cap = 3 * super_cycles_ + 64;
            for (int k = 0; k < cap; ++k) {
                if (k > 0 && prev_skipped && next_is_run()) break;
                prev_skipped = sim_.run_cycle().skipped;
            }
        } else {
            sim_.run_cycle();
        }
        sim_.fill_metrics(m);
        if (trace) sim_.detach_trace();
    }

private:
    struct Vec {
        std::array<double, 3> v{0.0, 0.0, 0.0};
    };
    struct Snap {
        double t, iL, vC;
        control::ControllerState ctl;
    };

    Vec state_vec() const {
        Vec x;
        x.v[0] = sim_.iL();
        x.v[1] = sim_.vC();
        x.v[2] = closed_loop_ ? sim_.controller().integrator : 0.0;
        return x;
    }
    void set_from_vec(const Vec& x) {
        sim_.set_state(x.v[0], x.v[1], sim_.t());
        if (closed_loop_) {
            auto c = sim_.controller();
            c.integrator = x.v[2];
            sim_.set_controller(c);
        }
    }
    Snap snapshot() const {
        return {sim_.t(), sim_.iL(), sim_.vC(), sim_.controller()};
    }
    void restore(const Snap& s) {
        sim_.set_state(s.iL, s.vC, s.t);
        sim_.set_controller(s.ctl);
    }

    double integ_scale() const {
        const auto& cfg = sim_.config();
        const double span = scheme_ == Scheme::VoltageMode ? cfg.Vramp_pp : cfg.ipk_max;
        return std::max(std::abs(sim_.controller().integrator),
                        span / std::max(cfg.ki, 1e-9));
    }

    double rel_residual(const Vec& a, const Vec& b) const {
        double r = std::max(std::abs(a.v[0] - b.v[0]) / ipk_scale_,
                            std::abs(a.v[1] - b.v[1]) / vo_scale_);
        if (closed_loop_)
            r = std::max(r, std::abs(a.v[2] - b.v[2]) / integ_scale());
        return r;
    }

    // One damped-Newton step on the cycle map; returns the post-step residual
    // or +inf when the step was rejected (saturation, singularity, no gain).
    double newton_step() {
        const Snap s = snapshot();
        const Vec x = state_vec();
        auto eval = [&](const Vec& in, Vec& out) {
            restore(s);
            set_from_vec(in);
            const auto r = sim_.run_cycle();
            out = state_vec();
            return !r.saturated;
        };
        Vec fx;
        if (!eval(x, fx)) {
            restore(s);
            return kInf;
        }
        const double res0 = rel_residual(fx, x);
        const double scales[3] = {ipk_scale_, vo_scale_, integ_scale()};
        double J[3][3] = {};
        for (int j = 0; j < dim_; ++j) {
            Vec xp = x;
            const double eps = 1e-6 * scales[j];
            xp.v[j] += eps;
            Vec fp;
            if (!eval(xp, fp)) {
                restore(s);
                return kInf;
            }
            for (int i = 0; i < dim_; ++i) J[i][j] = (fp.v[i] - fx.v[i]) / eps;
        }
        // solve (I - J) d = fx - x
        double A[3][4] = {};
        for (int i = 0; i < dim_; ++i) {
            for (int j = 0; j < dim_; ++j) A[i][j] = (i == j ? 1.0 : 0.0) - J[i][j];
            A[i][dim_] = fx.v[i] - x.v[i];
        }
        for (int c = 0; c < dim_; ++c) {
            int piv = c;
            for (int rr = c + 1; rr < dim_; ++rr)
                if (std::abs(A[rr][c]) > std::abs(A[piv][c])) piv = rr;
            if (std::abs(A[piv][c]) < 1e-300) {
                restore(s);
                return kInf;
            }
            std::swap(A[c], A[piv]);
            for (int rr = 0; rr < dim_; ++rr) {
                if (rr == c) continue;
                const double f = A[rr][c] / A[c][c];
                for (int cc = c; cc <= dim_; ++cc) A[rr][cc] -= f * A[c][cc];
            }
        }
        Vec xn = x;
        for (int i = 0; i < dim_; ++i) xn.v[i] += A[i][dim_] / A[i][i];
        if (sim_.params().topology == Topology::Asynchronous)
            xn.v[0] = std::max(xn.v[0], 0.0);
        for (int i = 0; i < dim_; ++i)
            if (!std::isfinite(xn.v[i])) {
                restore(s);
                return kInf;
            }
        Vec fn;
        if (!eval(xn, fn)) {
            restore(s);
            return kInf;
        }
        const double res1 = rel_residual(fn, xn);
        restore(s);
        if (res1 < res0) {
            set_from_vec(xn);
            residual = res1;
            return res1;
        }
        return kInf;
    }

    void polish() {
        for (int i = 0; i < 10 && residual > 1e-12; ++i)
            if (newton_step() == kInf) break;
    }

    bool next_is_run() const {
        auto ctl = sim_.controller();
        return control::burst_decision(sim_.vo_now(), sim_.config(), ctl) ==
               control::BurstDecision::RunCycle;
    }

    void converge_burst(int cap, double tol) {
        bool prev_skipped = false;
        bool have_mark = false;
        double mark_qvo = 0.0, mark_t = 0.0, last_mean = kInf;
        int mark_period = 0, boundaries = 0, run_streak = 0;
        Vec prev_cycle = state_vec();
        const double burst_tol = std::max(tol, 1e-4);

        for (periods = 0; periods < cap; ++periods) {
            if (prev_skipped && next_is_run()) {
                // super-period boundary at the current cycle start
                ++boundaries;
                const double q = sim_.accum().vo;
                const double tnow = sim_.t();
                if (have_mark && tnow > mark_t) {
                    const double mean = (q - mark_qvo) / (tnow - mark_t);
                    super_cycles_ = periods - mark_period;
                    if (boundaries >= 3) {
                        residual = std::abs(mean - last_mean) /
                                   std::max(std::abs(mean), 1e-3);
                        if (residual < burst_tol) return; // positioned at a boundary
                    }
                    last_mean = mean;
                }
                have_mark = true;
                mark_qvo = q;
                mark_t = tnow;
                mark_period = periods;
            }
            const Vec before = state_vec();
            const auto r = sim_.run_cycle();
            ipk_scale_ = std::max(r.cycle_ipk, 1e-3);
            vo_scale_ = std::max(std::abs(r.vo_end), 1e-3);
            prev_skipped = r.skipped;
            run_streak = r.skipped ? 0 : run_streak + 1;
            // heavy load may never skip: fall back to per-cycle periodicity
            residual = rel_residual(state_vec(), before);
            (void)prev_cycle;
            if (run_streak > 1024 && residual < tol) {
                super_cycles_ = 0;
                return;
            }
        }
        throw ConvergenceFailure(
            "burst steady state not reached within " + std::to_string(cap) +
                " periods (super-period mean residual " + std::to_string(residual) + ")",
            residual);
    }

    Simulator& sim_;
    Scheme scheme_;
    bool allow_newton_;
    bool closed_loop_ = false;
    int dim_ = 2;
    double ipk_scale_ = 1e-3, vo_scale_ = 1e-3;
    int super_cycles_ = 0;
};

// Analysis-guided initial state so the cycle map starts near its fixed point.
inline void warm_start(Simulator& sim) {
    const ConverterParams& p = sim.params();
    const ControlConfig& cfg = sim.config();
    const double G = sim.load()(sim.t());
    ConverterParams pe = p;
    pe.R = G > 0.0 ? 1.0 / G : 1e12;

    auto duty_estimate = [&](double vt) {
        double D;
        try {
            D = analysis::duty_for_vo(pe, vt);
        } catch (const Error&) {
            return 0.95;
        }
        if (analysis::conduction_mode(pe, D) == ConductionMode::DCM && vt < pe.Vi) {
            const double m = vt / pe.Vi;
            const double denom = (2.0 / m - 1.0) * (2.0 / m - 1.0) - 1.0;
            if (denom > 0.0) D = 2.0 * std::sqrt(analysis::k_param(pe) / denom);
        }
        return std::clamp(D, 0.0, 1.0);
    };

    double iL0 = 0.0, vC0 = 0.0;
    control::ControllerState ctl;
    const double vt = cfg.vo_target();

    switch (cfg.scheme) {
        case Scheme::OpenLoopDuty: {
            const SteadyStateReport r = analysis::steady_state(pe, cfg.duty);
            vC0 = r.Vo_avg;
            iL0 = r.mode == ConductionMode::CCM ? r.Io - r.dIL / 2.0 : 0.0;
            break;
        }
        case Scheme::VoltageMode: {
            const double D = duty_estimate(vt);
            vC0 = std::min(vt, p.Vi);
            iL0 = vC0 * G;
            if (cfg.ki > 0.0)
                ctl.integrator = (cfg.ramp_valley + D * cfg.Vramp_pp) / cfg.ki;
            break;
        }
        case Scheme::CurrentMode: {
            vC0 = std::min(vt, p.Vi);
            iL0 = vC0 * G;
            if (cfg.ipk_cmd <= 0.0 && cfg.ki > 0.0)
                ctl.integrator = std::min(iL0 * 1.5 + 1e-3, cfg.ipk_max) / cfg.ki;
            break;
        }
        case Scheme::Burst: {
            vC0 = (cfg.Vref - cfg.burst_hyst) / cfg.fb_ratio;
            iL0 = 0.0;
            break;
        }
    }
    if (p.topology == Topology::Asynchronous) iL0 = std::max(iL0, 0.0);
    sim.set_state(iL0, vC0, sim.t());
    sim.set_controller(ctl);
}

} // namespace detail

// Time-domain integration for a fixed horizon from an explicit initial state.
// Records every trace_stride-th integration step plus all conduction-state
// transitions.
inline Trace simulate(const ConverterParams& p, const ControlConfig& cfg,
                      double t_end, PlantState init, const SimOptions& opts = {}) {
    detail::Simulator sim(p, cfg, opts);
    const double iL0 = init.cond == ConductionState::Idle ? 0.0 : init.iL;
    sim.set_state(iL0, init.vC, init.t);
    if (t_end - init.t < p.Ts() * (1.0 - 1e-9))
        throw ValidationError("t_end must cover at least one switching period");
    const int n = static_cast<int>(std::ceil((t_end - init.t) / p.Ts() - 1e-9));
    Trace tr;
    sim.reset_window();
    sim.attach_trace(&tr);
    for (int k = 0; k < n; ++k) sim.run_cycle();
    return tr;
}

// Iterates the cycle map to its fixed point, then measures one full period
// (or one burst super-period) and returns its trace together with the
// extracted metrics.
inline std::pair<Trace, Metrics> run_to_steady_state(const ConverterParams& p,
                                                     const ControlConfig& cfg,
                                                     const SimOptions& opts = {}) {
    detail::Simulator sim(p, cfg, opts);
    detail::warm_start(sim);
    int cap = opts.max_periods;
    if (opts.t_end > 0.0)
        cap = std::min<int>(cap, std::max<int>(1, static_cast<int>(opts.t_end / p.Ts())));
    detail::SteadyStateDriver drv(sim);
    drv.converge(cap, opts.ss_tol);
    Trace tr;
    Metrics m;
    drv.measure(&tr, m);
    return {std::move(tr), m};
}

// Trace-based efficiency per the loss model: Pout/(Pin + Vi*Iq + Psw) with
// Pin the mean input conduction power and Psw the overlap + gate-drive term
// scaled by the realized switching rate.
inline double measure_efficiency(const Trace& trace, const ConverterParams& p,
                                 const ControlConfig& /*cfg*/) {
    if (trace.samples.size() < 2) return 0.0;
    const double W = trace.samples.back().t - trace.samples.front().t;
    if (W <= 0.0) return 0.0;
    double e_out = 0.0, e_in = 0.0, ipk = 0.0;
    int n_on = 0;
    for (size_t i = 0; i + 1 < trace.samples.size(); ++i) {
        const TraceSample& a = trace.samples[i];
        const TraceSample& b = trace.samples[i + 1];
        const double dt = b.t - a.t;
        e_out += dt * 0.5 * (a.vo * a.vo + b.vo * b.vo) / p.R;
        if (a.cond == ConductionState::On)
            e_in += dt * 0.5 * p.Vi * (a.iL + b.iL);
        ipk = std::max(ipk, a.iL);
        if (a.cond == ConductionState::On &&
            (i == 0 || trace.samples[i - 1].cond != ConductionState::On))
            ++n_on;
    }
    ipk = std::max(ipk, trace.samples.back().iL);
    const double overlap = p.soft_switching ? 0.0 : 0.5 * p.Vi * ipk * (p.tr + p.tf);
    const double psw = (n_on / W) * (overlap + p.gate_energy);
    const double pin = e_in / W + p.Vi * p.Iq + psw;
    return pin > 0.0 ? std::clamp(e_out / W / pin, 0.0, 1.0) : 0.0;
}

// Load-step response: steady state at I_from, a linear load-current ramp to
// I_to over `ramp` seconds, transient recording until the loop re-settles.
// settle_time is the last instant vo sits outside +/-1% of the target,
// relative to the ramp start. Load currents are mapped to conductances at
// the regulation target, so I = 0 is an open load.
inline std::pair<Trace, Metrics> load_step(const ConverterParams& p,
                                           const ControlConfig& cfg, double I_from,
                                           double I_to, double ramp,
                                           const SimOptions& opts = {}) {
    const double vt = cfg.vo_target();
    const double g_from = I_from / vt;
    const double g_to = I_to / vt;

    detail::Simulator sim(p, cfg, opts);
    sim.set_load(detail::LoadLaw::constant(g_from));
    detail::warm_start(sim);
    detail::SteadyStateDriver pre(sim);
    pre.converge(opts.max_periods, opts.ss_tol);
    Metrics m1;

    if (I_from == I_to) {
        Trace tr;
        pre.measure(&tr, m1);
        m1.settle_time = 0.0;
        m1.load_regulation_defined = false;
        return {std::move(tr), m1};
    }
    pre.measure(nullptr, m1);

    const double t_step = sim.t();
    sim.set_load({g_from, g_to, t_step, t_step + ramp});

    Trace tr;
    sim.attach_trace(&tr);
    detail::SteadyStateDriver post(sim, /*allow_newton=*/false);
    post.converge(opts.max_periods, opts.ss_tol);
    Metrics m2;
    post.measure(nullptr, m2); // window runs with the trace still attached
    sim.detach_trace();

    double last_exit = t_step;
    bool outside_at_end = false;
    for (const TraceSample& s : tr.samples) {
        if (s.t < t_step) continue;
        if (std::abs(s.vo - vt) > 0.01 * vt) {
            last_exit = s.t;
            outside_at_end = true;
        } else {
            outside_at_end = false;
        }
    }
    m2.settle_time = outside_at_end ? std::numeric_limits<double>::quiet_NaN()
                                    : last_exit - t_step;
    const double d_io = m2.Io - m1.Io;
    if (std::abs(d_io) > 1e-12) {
        m2.load_regulation = (m2.Vo_avg - m1.Vo_avg) / d_io;
        m2.load_regulation_defined = true;
    }
    return {std::move(tr), m2};
}

enum class SweepAxis { Io, Vi };

struct SweepRow {
    double axis_value = 0.0;
    Metrics metrics;
    bool failed = false;
    std::string error;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::Io;
    std::vector<SweepRow> rows;
    double line_regulation = std::numeric_limits<double>::quiet_NaN(); // [V/V]
};

// Per-point steady-state sweep over load current (R = Vo_target/Io) or input
// voltage. Point failures are recorded and the sweep continues.
inline SweepResult sweep(const ConverterParams& p, const ControlConfig& cfg,
                         SweepAxis axis, const std::vector<double>& values,
                         const SimOptions& opts = {}) {
    SweepResult out;
    out.axis = axis;
    for (const double v : values) {
        SweepRow row;
        row.axis_value = v;
        ConverterParams pp = p;
        if (axis == SweepAxis::Io) {
            if (!(v > 0.0)) {
                row.failed = true;
                row.error = "load current must be positive";
                out.rows.push_back(row);
                continue;
            }
            pp.R = cfg.vo_target() / v;
        } else {
            pp.Vi = v;
        }
        try {
            auto [tr, m] = run_to_steady_state(pp, cfg, opts);
            (void)tr;
            row.metrics = m;
        } catch (const Error& e) {
            row.failed = true;
            row.error = e.what();
        }
        out.rows.push_back(row);
    }
    if (axis == SweepAxis::Vi) {
        const SweepRow* first = nullptr;
        const SweepRow* last = nullptr;
        for (const auto& r : out.rows)
            if (!r.failed) {
                if (!first) first = &r;
                last = &r;
            }
        if (first && last && last->axis_value != first->axis_value)
            out.line_regulation = (last->metrics.Vo_avg - first->metrics.Vo_avg) /
                                  (last->axis_value - first->axis_value);
    }
    return out;
}

} // namespace buckbench::engine
