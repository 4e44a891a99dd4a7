#pragma once

#include <stdexcept>
#include <string>

namespace wlens {

// Error taxonomy. Three families, matching the CLI exit codes:
//   config mistakes (exit 2), I/O and archive problems (exit 3),
//   and numeric/domain violations surfaced during analysis.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- configuration ---
struct ConfigError : Error {
    using Error::Error;
};

// --- archive / file I/O ---
struct IoError : Error {
    using Error::Error;
};
struct ParseError : IoError {
    using IoError::IoError;
};
struct IntegrityError : IoError {
    using IoError::IoError;
};
struct NotFound : IoError {
    using IoError::IoError;
};
struct UnsupportedDtype : IoError {
    using IoError::IoError;
};
// Layer sets of two checkpoints disagree under the active filter.
struct SchemaError : IoError {
    using IoError::IoError;
};

// --- analysis ---
struct ShapeError : Error {
    using Error::Error;
};
struct DtypeError : Error {
    using Error::Error;
};
struct ArityError : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct NumericsError : Error {
    using Error::Error;
};
struct ClipViolation : Error {
    using Error::Error;
};

}  // namespace wlens
