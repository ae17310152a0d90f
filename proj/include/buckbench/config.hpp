#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "buckbench/errors.hpp"
#include "buckbench/model.hpp"

// Plain-text run configuration: key = value pairs grouped in [converter],
// [control] and [sim] sections, SI units throughout. Keys are named exactly
// after the corresponding struct fields.
namespace buckbench::config {

// Simulation and command knobs carried by the [sim] section.
struct SimConfig {
    int steps_per_period = 256;
    double ss_tol = 1e-6;
    int max_periods = 10000;
    double t_end = 0.0; // 0 = run until steady state
    int trace_stride = 1;

    std::string sweep;      // "io" or "vi"
    double sweep_min = 1e-3;
    double sweep_max = 0.3;
    int sweep_points = 30;
    bool sweep_log = true;

    double step_from = 0.0;
    double step_to = 0.3;
    double step_ramp = 2e-6;
};

struct FullConfig {
    ConverterParams converter;
    ControlConfig control;
    SimConfig sim;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    return x;
}

inline int to_int(const std::string& key, const std::string& v) {
    const double x = to_double(key, v);
    return static_cast<int>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("bad boolean value for " + key + ": '" + v + "'");
}

inline Topology to_topology(const std::string& v) {
    if (v == "Asynchronous") return Topology::Asynchronous;
    if (v == "Synchronous") return Topology::Synchronous;
    throw ConfigError("unknown topology '" + v + "'");
}

inline Scheme to_scheme(const std::string& v) {
    if (v == "OpenLoopDuty") return Scheme::OpenLoopDuty;
    if (v == "VoltageMode") return Scheme::VoltageMode;
    if (v == "CurrentMode") return Scheme::CurrentMode;
    if (v == "Burst") return Scheme::Burst;
    throw ConfigError("unknown scheme '" + v + "'");
}

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline bool set_converter(ConverterParams& p, const std::string& k, const std::string& v) {
    if (k == "Vi") p.Vi = to_double(k, v);
    else if (k == "L") p.L = to_double(k, v);
    else if (k == "C") p.C = to_double(k, v);
    else if (k == "RL") p.RL = to_double(k, v);
    else if (k == "RC") p.RC = to_double(k, v);
    else if (k == "R") p.R = to_double(k, v);
    else if (k == "Vd") p.Vd = to_double(k, v);
    else if (k == "RDSon_hs") p.RDSon_hs = to_double(k, v);
    else if (k == "RDSon_ls") p.RDSon_ls = to_double(k, v);
    else if (k == "fs") p.fs = to_double(k, v);
    else if (k == "Iq") p.Iq = to_double(k, v);
    else if (k == "topology") p.topology = to_topology(v);
    else if (k == "tr") p.tr = to_double(k, v);
    else if (k == "tf") p.tf = to_double(k, v);
    else if (k == "gate_energy") p.gate_energy = to_double(k, v);
    else if (k == "soft_switching") p.soft_switching = to_bool(k, v);
    else return false;
    return true;
}

inline bool set_control(ControlConfig& c, const std::string& k, const std::string& v) {
    if (k == "scheme") c.scheme = to_scheme(v);
    else if (k == "duty") c.duty = to_double(k, v);
    else if (k == "Vref") c.Vref = to_double(k, v);
    else if (k == "Vramp_pp") c.Vramp_pp = to_double(k, v);
    else if (k == "ramp_valley") c.ramp_valley = to_double(k, v);
    else if (k == "kp") c.kp = to_double(k, v);
    else if (k == "ki") c.ki = to_double(k, v);
    else if (k == "slope_comp") c.slope_comp = to_double(k, v);
    else if (k == "burst_hyst") c.burst_hyst = to_double(k, v);
    else if (k == "dead_time") c.dead_time = to_double(k, v);
    else if (k == "fb_ratio") c.fb_ratio = to_double(k, v);
    else if (k == "ipk_cmd") c.ipk_cmd = to_double(k, v);
    else if (k == "burst_ipk") c.burst_ipk = to_double(k, v);
    else if (k == "ipk_max") c.ipk_max = to_double(k, v);
    else return false;
    return true;
}

inline bool set_sim(SimConfig& s, const std::string& k, const std::string& v) {
    if (k == "steps_per_period") s.steps_per_period = to_int(k, v);
    else if (k == "ss_tol") s.ss_tol = to_double(k, v);
    else if (k == "max_periods") s.max_periods = to_int(k, v);
    else if (k == "t_end") s.t_end = to_double(k, v);
    else if (k == "trace_stride") s.trace_stride = to_int(k, v);
    else if (k == "sweep") {
        if (v != "io" && v != "vi") throw ConfigError("sweep must be 'io' or 'vi'");
        s.sweep = v;
    }
    else if (k == "sweep_min") s.sweep_min = to_double(k, v);
    else if (k == "sweep_max") s.sweep_max = to_double(k, v);
    else if (k == "sweep_points") s.sweep_points = to_int(k, v);
    else if (k == "sweep_log") s.sweep_log = to_bool(k, v);
    else if (k == "step_from") s.step_from = to_double(k, v);
    else if (k == "step_to") s.step_to = to_double(k, v);
    else if (k == "step_ramp") s.step_ramp = to_double(k, v);
    else return false;
    return true;
}

inline void set_key(FullConfig& cfg, const std::string& section,
                    const std::string& key, const std::string& value) {
    bool ok;
    if (section == "converter") ok = set_converter(cfg.converter, key, value);
    else if (section == "control") ok = set_control(cfg.control, key, value);
    else if (section == "sim") ok = set_sim(cfg.sim, key, value);
    else throw ConfigError("unknown section [" + section + "]");
    if (!ok) throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
}

} // namespace detail

inline FullConfig parse(const std::string& text) {
    FullConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("malformed section header at line " +
                                  std::to_string(lineno));
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(lineno));
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError("key '" + key + "' outside any section");
        detail::set_key(cfg, section, key, value);
    }
    return cfg;
}

inline FullConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config not found: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

// Applies one "section.key=value" override.
inline void apply_override(FullConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: '" + spec + "'");
    const std::string path = detail::trim(spec.substr(0, eq));
    const std::string value = detail::trim(spec.substr(eq + 1));
    const auto dot = path.find('.');
    if (dot == std::string::npos)
        throw ConfigError("override key must be section.key: '" + spec + "'");
    detail::set_key(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

inline std::string serialize(const FullConfig& cfg) {
    using detail::fmt_g;
    const ConverterParams& p = cfg.converter;
    const ControlConfig& c = cfg.control;
    const SimConfig& s = cfg.sim;
    std::string out;
    out += "[converter]\n";
    out += "Vi = " + fmt_g(p.Vi) + "\n";
    out += "L = " + fmt_g(p.L) + "\n";
    out += "C = " + fmt_g(p.C) + "\n";
    out += "RL = " + fmt_g(p.RL) + "\n";
    out += "RC = " + fmt_g(p.RC) + "\n";
    out += "R = " + fmt_g(p.R) + "\n";
    out += "Vd = " + fmt_g(p.Vd) + "\n";
    out += "RDSon_hs = " + fmt_g(p.RDSon_hs) + "\n";
    out += "RDSon_ls = " + fmt_g(p.RDSon_ls) + "\n";
    out += "fs = " + fmt_g(p.fs) + "\n";
    out += "Iq = " + fmt_g(p.Iq) + "\n";
    out += std::string("topology = ") + to_string(p.topology) + "\n";
    out += "tr = " + fmt_g(p.tr) + "\n";
    out += "tf = " + fmt_g(p.tf) + "\n";
    out += "gate_energy = " + fmt_g(p.gate_energy) + "\n";
    out += std::string("soft_switching = ") + (p.soft_switching ? "1" : "0") + "\n";
    out += "\n[control]\n";
    out += std::string("scheme = ") + to_string(c.scheme) + "\n";
    out += "duty = " + fmt_g(c.duty) + "\n";
    out += "Vref = " + fmt_g(c.Vref) + "\n";
    out += "Vramp_pp = " + fmt_g(c.Vramp_pp) + "\n";
    out += "ramp_valley = " + fmt_g(c.ramp_valley) + "\n";
    out += "kp = " + fmt_g(c.kp) + "\n";
    out += "ki = " + fmt_g(c.ki) + "\n";
    out += "slope_comp = " + fmt_g(c.slope_comp) + "\n";
    out += "burst_hyst = " + fmt_g(c.burst_hyst) + "\n";
    out += "dead_time = " + fmt_g(c.dead_time) + "\n";
    out += "fb_ratio = " + fmt_g(c.fb_ratio) + "\n";
    out += "ipk_cmd = " + fmt_g(c.ipk_cmd) + "\n";
    out += "burst_ipk = " + fmt_g(c.burst_ipk) + "\n";
    out += "ipk_max = " + fmt_g(c.ipk_max) + "\n";
    out += "\n[sim]\n";
    out += "steps_per_period = " + std::to_string(s.steps_per_period) + "\n";
    out += "ss_tol = " + fmt_g(s.ss_tol) + "\n";
    out += "max_periods = " + std::to_string(s.max_periods) + "\n";
    out += "t_end = " + fmt_g(s.t_end) + "\n";
    out += "trace_stride = " + std::to_string(s.trace_stride) + "\n";
    if (!s.sweep.empty()) out += "sweep = " + s.sweep + "\n";
    out += "sweep_min = " + fmt_g(s.sweep_min) + "\n";
    out += "sweep_max = " + fmt_g(s.sweep_max) + "\n";
    out += "sweep_points = " + std::to_string(s.sweep_points) + "\n";
    out += std::string("sweep_log = ") + (s.sweep_log ? "1" : "0") + "\n";
    out += "step_from = " + fmt_g(s.step_from) + "\n";
    out += "step_to = " + fmt_g(s.step_to) + "\n";
    out += "step_ramp = " + fmt_g(s.step_ramp) + "\n";
    return out;
}

} // namespace buckbench::config
