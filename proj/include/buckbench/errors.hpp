#pragma once

#include <stdexcept>
#include <string>

namespace buckbench {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A parameter or config invariant is violated; message names the first bad field.
struct ValidationError : Error {
    using Error::Error;
};

// Config file / override problems (missing file, unknown key, bad value).
struct ConfigError : Error {
    using Error::Error;
};

// Requested operating point cannot exist (e.g. non-positive applied volt-seconds).
struct InfeasibleOperatingPoint : Error {
    using Error::Error;
};

// duty_for_vo produced D outside [0,1].
struct UnreachableTarget : Error {
    using Error::Error;
};

// Conduction state is not legal for the configured topology.
struct InconsistentState : Error {
    using Error::Error;
};

// Steady-state search hit the period cap; carries the last cycle-map residual.
struct ConvergenceFailure : Error {
    double residual;
    explicit ConvergenceFailure(const std::string& msg, double res)
        : Error(msg), residual(res) {}
};

// Integration produced a non-finite state; carries the failing time.
struct DivergenceError : Error {
    double t;
    explicit DivergenceError(const std::string& msg, double time)
        : Error(msg), t(time) {}
};

} // namespace buckbench
