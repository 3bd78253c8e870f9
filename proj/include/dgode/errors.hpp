#pragma once

#include <stdexcept>
#include <string>

namespace dgode {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-square input, symmetry violation, or malformed structural input.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Operand dimensions do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Spectrum is complex or defective; no real eigendecomposition exists.
class DiagonalizabilityError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class UnknownSpeakerError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

/// File-format violation; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    explicit ParseError(const std::string& msg) : Error(msg), line_(0) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace dgode
