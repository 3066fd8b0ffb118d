#pragma once

#include <stdexcept>
#include <string>

namespace semalign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A numeric hyperparameter is outside its valid domain.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// FFT extents that are not powers of two.
class UnsupportedSizeError : public Error {
public:
    using Error::Error;
};

/// Malformed file or inconsistent on-disk content.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Caller-provided data violates a precondition (bad label, duplicate name, ...).
class InputError : public Error {
public:
    using Error::Error;
};

class DegenerateClassError : public Error {
public:
    using Error::Error;
};

class EmptyBankError : public Error {
public:
    using Error::Error;
};

class ShortageError : public Error {
public:
    using Error::Error;
};

/// A loss term evaluated to NaN or infinity; the message names the term.
class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace semalign
