#pragma once

#include <stdexcept>
#include <string>

namespace svtc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Scene/question sampling ran out of resample attempts.
class GenerationError : public Error {
public:
    using Error::Error;
};

// Malformed binary or text artifact (bad magic, truncation, unknown keys).
class FormatError : public Error {
public:
    using Error::Error;
};

// Inputs that violate an operation's preconditions.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A pipeline stage was asked to run before the artifacts it consumes exist.
class DependencyError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace svtc
