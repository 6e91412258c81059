#pragma once

#include <stdexcept>
#include <string>

namespace ztrans {

// Error taxonomy shared by all modules. Callers that need to distinguish
// recoverable conditions catch the concrete type; the CLI maps them to
// exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DegenerateInput : Error {
    using Error::Error;
};

struct SingularityError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace ztrans
