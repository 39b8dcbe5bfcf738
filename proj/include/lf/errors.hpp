#pragma once

#include <stdexcept>
#include <string>

namespace lf {

// Base class for all library errors. The CLI maps subclasses onto exit
// codes: ConfigError -> 1, data errors -> 2, transport errors -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Data errors (exit code 2).
struct IoError : Error {
    using Error::Error;
};
struct SchemaError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct EmptyIndex : Error {
    using Error::Error;
};
struct EmptyPool : Error {
    using Error::Error;
};
struct LengthMismatch : Error {
    using Error::Error;
};
struct MissingParam : Error {
    using Error::Error;
};
struct PageMismatch : Error {
    using Error::Error;
};
struct NoPerceptionData : Error {
    using Error::Error;
};
struct NoHits : Error {
    using Error::Error;
};
struct NoCorrect : Error {
    using Error::Error;
};
struct JudgeUnavailable : Error {
    using Error::Error;
};

// Transport errors (exit code 3).
struct TransportError : Error {
    using Error::Error;
};
struct NonRetriableStatus : TransportError {
    using TransportError::TransportError;
};
struct EmptyReply : TransportError {
    using TransportError::TransportError;
};
struct JudgeTransportError : TransportError {
    using TransportError::TransportError;
};
struct JudgeParseError : Error {
    using Error::Error;
};

}  // namespace lf
