#pragma once

#include <stdexcept>
#include <string>

namespace spycer {

/// Failure taxonomy shared by every module. The CLI maps the category of
/// a kind onto its exit code (usage = 1, data = 2, numeric = 3).
enum class ErrorKind {
    // usage / configuration
    Usage,
    Config,
    // data
    OutOfBounds,
    MissingVariable,
    MissingReading,
    PlacementFailure,
    InsufficientData,
    InsufficientSensors,
    NoSensors,
    EmptyInput,
    Degenerate,
    Format,
    Io,
    ShapeMismatch,
    NotScalar,
    NonPositiveResistance,
    // numeric
    StabilityFailure,
    NumericFailure,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::Config: return "Config";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::MissingVariable: return "MissingVariable";
    case ErrorKind::MissingReading: return "MissingReading";
    case ErrorKind::PlacementFailure: return "PlacementFailure";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::InsufficientSensors: return "InsufficientSensors";
    case ErrorKind::NoSensors: return "NoSensors";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::Format: return "Format";
    case ErrorKind::Io: return "Io";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::NonPositiveResistance: return "NonPositiveResistance";
    case ErrorKind::StabilityFailure: return "StabilityFailure";
    case ErrorKind::NumericFailure: return "NumericFailure";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
            return 1;
        case ErrorKind::StabilityFailure:
        case ErrorKind::NumericFailure:
            return 3;
        default:
            return 2;
        }
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace spycer
