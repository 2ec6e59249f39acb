#pragma once

#include <stdexcept>
#include <string>

namespace dcmg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Topology problems: dangling endpoints, self-loops, bad attachments.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Parameter or configuration values outside their admissible range.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Constant-power load evaluated at a bus voltage at or below the floor.
class SingularityError : public Error {
public:
    SingularityError(int bus, double time, double voltage)
        : Error("constant-power load singular at bus " + std::to_string(bus + 1) +
                " (V = " + std::to_string(voltage) + " V, t = " + std::to_string(time) + " s)"),
          bus_(bus), time_(time) {}

    int bus() const noexcept { return bus_; }
    double time() const noexcept { return time_; }

private:
    int bus_;
    double time_;
};

/// Equilibrium solver failures (divergence, infeasible iterates, inconsistent data).
class EquilibriumError : public Error {
public:
    using Error::Error;
};

/// Integrator blew up (non-finite state or step-size underflow).
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double last_good_time)
        : Error(what), last_good_time_(last_good_time) {}

    double last_good_time() const noexcept { return last_good_time_; }

private:
    double last_good_time_;
};

/// Malformed scenario files or event sequences.
class ScenarioError : public Error {
public:
    using Error::Error;
};

}  // namespace dcmg
