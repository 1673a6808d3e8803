#pragma once

#include <stdexcept>
#include <string>

namespace geomeld {

// Error taxonomy. CLI maps these onto exit codes: usage=1, data=2, numeric=3.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Gradient-oracle failures (e.g. a non-deterministic objective).
struct OracleError : std::runtime_error {
    explicit OracleError(const std::string& msg) : std::runtime_error("oracle error: " + msg) {}
};

// Tile container format errors, one named type per failure mode.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BadMagicError : FormatError {
    explicit BadMagicError(const std::string& msg) : FormatError("bad magic: " + msg) {}
};

struct BadVersionError : FormatError {
    explicit BadVersionError(const std::string& msg) : FormatError("bad version: " + msg) {}
};

struct ChecksumError : FormatError {
    explicit ChecksumError(const std::string& msg) : FormatError("checksum mismatch: " + msg) {}
};

struct IncompleteSignalError : std::runtime_error {
    explicit IncompleteSignalError(const std::string& msg)
        : std::runtime_error("incomplete signal: " + msg) {}
};

struct DegenerateCaptionError : std::runtime_error {
    explicit DegenerateCaptionError(const std::string& msg)
        : std::runtime_error("degenerate caption: " + msg) {}
};

struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error("eval error: " + msg) {}
};

}  // namespace geomeld
