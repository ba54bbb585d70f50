#pragma once

#include <stdexcept>
#include <string>

namespace arzno {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    instability = 2,
    io = 3,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::usage; }
};

/// Argument outside the admissible set of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration file or command-line option.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite state detected while stepping; carries the simulation time.
class InstabilityError : public Error {
public:
    InstabilityError(const std::string& what, double time)
        : Error(what + " (t = " + std::to_string(time) + " s)"), time_(time) {}
    double time() const noexcept { return time_; }
    ExitCode exit_code() const noexcept override { return ExitCode::instability; }

private:
    double time_;
};

/// Fixed-point iteration hit its iteration cap.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
    double residual() const noexcept { return residual_; }
    ExitCode exit_code() const noexcept override { return ExitCode::instability; }

private:
    double residual_;
};

/// Unreadable, truncated, or mismatched binary/text file.
class FormatError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::io; }
};

}  // namespace arzno
