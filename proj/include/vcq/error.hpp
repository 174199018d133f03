#pragma once

#include <stdexcept>
#include <string>

namespace vcq {

/// Base for every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Index or value outside its admissible range (position, token id, k_t).
class RangeError : public Error {
public:
    using Error::Error;
};

/// Invalid parameterization (schedule, policy, encoder sizes).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad input data: non-finite values, empty corpora, missing labels.
class InputError : public Error {
public:
    using Error::Error;
};

/// Dimension or row-count mismatch between cooperating objects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated binary file.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace vcq
