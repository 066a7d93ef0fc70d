#pragma once

#include <stdexcept>
#include <string>

namespace fbd {

/**
 * Base error for the library. exit_code() feeds the CLI contract:
 * 1 for internal errors, 2 for user/config errors.
 */
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 1; }
};

class UserError : public Error {
public:
    using Error::Error;
    int exit_code() const override { return 2; }
};

// ---- data ingestion ----

class MissingColumn : public UserError {
public:
    using UserError::UserError;
};

class NonNumericCell : public UserError {
public:
    NonNumericCell(long row, const std::string& col)
        : UserError("non-numeric cell at row " + std::to_string(row) + ", column \"" + col + "\""),
          row(row), column(col) {}
    long row;
    std::string column;
};

class EmptyFile : public UserError {
public:
    using UserError::UserError;
};

class InvalidConfig : public UserError {
public:
    using UserError::UserError;
};

class SeriesTooShort : public UserError {
public:
    using UserError::UserError;
};

class BadFractions : public UserError {
public:
    using UserError::UserError;
};

class IoError : public UserError {
public:
    using UserError::UserError;
};

class EmptyResults : public UserError {
public:
    using UserError::UserError;
};

// ---- numerics / model internals ----

class ChannelMismatch : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NotSymmetric : public Error {
public:
    using Error::Error;
};

class NotFactorizable : public Error {
public:
    using Error::Error;
};

class NonFiniteValue : public Error {
public:
    using Error::Error;
};

class StaleCache : public Error {
public:
    using Error::Error;
};

class StaleDraw : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class EmptySplit : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    using Error::Error;
};

}  // namespace fbd
