#pragma once

#include <stdexcept>
#include <string>

namespace bsdn {

/// Base of every error thrown by the library. The CLI maps kinds to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Out-of-range numeric argument (dilation < 1, sigma < 0, lambda <= 0, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Invalid network or training configuration; the message names the field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad input data (pixel values out of range, undersized images, undecodable files).
class InputError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

/// NaN loss or a non positive-definite matrix.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, BadChecksum, Malformed };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace bsdn
