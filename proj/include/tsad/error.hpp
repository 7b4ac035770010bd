#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsad {

/// Failure categories. The numeric values double as CLI exit codes.
enum class ErrorKind { config = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// Pipeline stage that raised the error; empty outside the benchmark runner.
    const std::string& stage() const noexcept { return stage_; }

    /// Copy of this error tagged with a stage name ("[stage] message").
    Error with_stage(std::string stage) const;

private:
    ErrorKind kind_;
    std::string stage_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorKind::config, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& message) : Error(ErrorKind::numerical, message) {}
};

using WarningHandler = std::function<void(std::string_view)>;

/// Emit a non-fatal diagnostic through the installed handler (stderr by default).
void warn(std::string_view message);

/// Install a handler; returns the previous one. Passing an empty handler restores stderr.
WarningHandler set_warning_handler(WarningHandler handler);

} // namespace tsad
