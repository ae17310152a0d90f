#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "buckbench/engine.hpp"
#include "buckbench/errors.hpp"
#include "buckbench/model.hpp"

// Plot-ready CSV exports. Numbers are written in full double precision,
// scientific notation; files are written to a temporary name and renamed so
// a failed run never leaves a partial CSV behind.
namespace buckbench::csv {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17e", v);
    return buf;
}

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ConfigError("cannot open output file " + tmp.string());
        os << content;
        if (!os) throw ConfigError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_trace(const std::filesystem::path& path, const engine::Trace& tr) {
    std::string s = "t,iL,vC,vo,cond,duty\n";
    s.reserve(s.size() + tr.samples.size() * 96);
    for (const auto& x : tr.samples) {
        s += fmt(x.t);
        s += ',';
        s += fmt(x.iL);
        s += ',';
        s += fmt(x.vC);
        s += ',';
        s += fmt(x.vo);
        s += ',';
        s += to_string(x.cond);
        s += ',';
        s += fmt(x.duty);
        s += '\n';
    }
    write_file_atomic(path, s);
}

inline void write_metrics(const std::filesystem::path& path, const engine::Metrics& m) {
    std::string s = "key,value\n";
    auto kv = [&s](const char* k, const std::string& v) {
        s += k;
        s += ',';
        s += v;
        s += '\n';
    };
    kv("Vo_avg", fmt(m.Vo_avg));
    kv("Vo_ripple_pp", fmt(m.Vo_ripple_pp));
    kv("vC_ripple_pp", fmt(m.vC_ripple_pp));
    kv("iL_ripple_pp", fmt(m.iL_ripple_pp));
    kv("Ipk", fmt(m.Ipk));
    kv("iL_min", fmt(m.iL_min));
    kv("Io", fmt(m.Io));
    kv("efficiency", fmt(m.efficiency));
    kv("mode", engine::to_string(m.mode));
    kv("D", fmt(m.D_measured));
    kv("D2", fmt(m.D2_measured));
    kv("D3", fmt(m.D3_measured));
    kv("load_regulation", fmt(m.load_regulation));
    kv("line_regulation", fmt(m.line_regulation));
    kv("settle_time", fmt(m.settle_time));
    kv("Pin", fmt(m.Pin));
    kv("Pout", fmt(m.Pout));
    kv("Pq", fmt(m.Pq));
    kv("Psw", fmt(m.Psw));
    kv("P_RL", fmt(m.P_RL));
    kv("P_RDS", fmt(m.P_RDS));
    kv("P_Vd", fmt(m.P_Vd));
    kv("P_RC", fmt(m.P_RC));
    kv("audit_residual_rel", fmt(m.audit_residual_rel));
    kv("window", fmt(m.window));
    kv("periods", std::to_string(m.periods));
    kv("convergence_residual", fmt(m.convergence_residual));
    kv("min_on_violation", m.min_on_violation ? "1" : "0");
    write_file_atomic(path, s);
}

inline void write_report(const std::filesystem::path& path, const SteadyStateReport& r) {
    std::string s = "key,value\n";
    auto kv = [&s](const char* k, const std::string& v) {
        s += k;
        s += ',';
        s += v;
        s += '\n';
    };
    kv("mode", to_string(r.mode));
    kv("Vo_avg", fmt(r.Vo_avg));
    kv("dIL", fmt(r.dIL));
    kv("Ipk", fmt(r.Ipk));
    kv("Io", fmt(r.Io));
    kv("K", fmt(r.K));
    kv("D", fmt(r.timing.D));
    kv("D2", fmt(r.timing.D2));
    kv("D3", fmt(r.timing.D3));
    kv("Ts", fmt(r.timing.Ts));
    kv("TON", fmt(r.timing.TON));
    kv("TOFF", fmt(r.timing.TOFF));
    if (r.efficiency) kv("efficiency", fmt(*r.efficiency));
    write_file_atomic(path, s);
}

inline void write_sweep(const std::filesystem::path& path, const engine::SweepResult& sw) {
    const char* axis = sw.axis == engine::SweepAxis::Io ? "io" : "vi";
    std::string s = std::string(axis) + ",Vo_avg,efficiency,mode,failed\n";
    for (const auto& row : sw.rows) {
        s += fmt(row.axis_value);
        s += ',';
        if (row.failed) {
            s += "nan,nan,none,1\n";
        } else {
            s += fmt(row.metrics.Vo_avg);
            s += ',';
            s += fmt(row.metrics.efficiency);
            s += ',';
            s += engine::to_string(row.metrics.mode);
            s += ",0\n";
        }
    }
    write_file_atomic(path, s);
}

} // namespace buckbench::csv
