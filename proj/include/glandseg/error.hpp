#pragma once

#include <stdexcept>
#include <string>

namespace glandseg {

/// Base of every error raised by the library. The exit code is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

/// Invalid parameters or arguments supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

/// Missing, malformed or inconsistent input data (files, dimensions, shapes).
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Image file decodes but has a bit depth the reader does not handle.
class UnsupportedBitDepth : public DataError {
public:
    using DataError::DataError;
};

/// Image file decodes but has a channel layout the reader does not handle.
class UnsupportedChannels : public DataError {
public:
    using DataError::DataError;
};

/// Tensor / raster extents do not agree.
class ShapeError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite values, singular matrices and the like.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw UsageError(what);
}

inline void require_shape(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

}  // namespace glandseg
