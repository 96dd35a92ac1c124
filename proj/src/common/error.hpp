// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace m2a {

/// Base class for every error raised by the core library. The C API maps
/// each subclass onto one status code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or ranks.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Kronecker factor that does not divide the layer dimensions.
class FactorizationError : public Error {
public:
    using Error::Error;
};

/// Bad argument values (ratios, coefficients, unknown names).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed dataset, config or checkpoint content.
class DataError : public Error {
public:
    using Error::Error;
};

/// Operation invoked in the wrong phase or mode.
class StateError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace m2a
