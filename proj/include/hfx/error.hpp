#pragma once

#include <stdexcept>
#include <string>

namespace hfx {

// Error taxonomy. The CLI maps ConfigError/UsageError to exit code 1 and
// DataError (and subclasses) to exit code 2; everything else is a bug.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Buggy/fixed statements tokenize to the same sequence, or a mask has no mass.
struct DegeneratePairError : DataError {
    explicit DegeneratePairError(const std::string& msg) : DataError(msg) {}
};

// A row that should be a probability distribution is not.
struct DistributionError : DataError {
    explicit DistributionError(const std::string& msg) : DataError(msg) {}
};

// Adapter/base fingerprint mismatch.
struct CompatibilityError : DataError {
    explicit CompatibilityError(const std::string& msg) : DataError(msg) {}
};

struct ParseError : DataError {
    explicit ParseError(const std::string& msg) : DataError(msg) {}
};

struct IoError : DataError {
    explicit IoError(const std::string& msg) : DataError(msg) {}
};

// Fewer paired observations than a statistical test needs.
struct InsufficientDataError : DataError {
    explicit InsufficientDataError(const std::string& msg) : DataError(msg) {}
};

}  // namespace hfx
