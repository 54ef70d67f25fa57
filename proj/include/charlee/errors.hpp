#pragma once

#include <stdexcept>
#include <string>

namespace charlee {

/// Base class of every error thrown by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad hyperparameters or incompatible shapes.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad data or an argument outside an operation's precondition.
class InputError : public Error {
public:
    using Error::Error;
};

class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t line)
        : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UnsupportedFormatError : public InputError {
public:
    using InputError::InputError;
};

class DomainError : public InputError {
public:
    using InputError::InputError;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during training.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace charlee
