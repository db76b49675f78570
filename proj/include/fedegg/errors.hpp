#pragma once

#include <stdexcept>
#include <string>

namespace fedegg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand sizes disagree (vectors, batches, parameter blocks).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input is well-formed but mathematically degenerate, e.g. a zero-norm vector
/// handed to a cosine similarity.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A precondition on a scalar argument was violated (negative step, gamma >= 1/L, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data (CIFAR batches, FEDF feature files).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid simulation configuration. Carries the offending key and, when the
/// value came from a file, its 1-based line number (0 otherwise).
class ConfigError : public Error {
public:
    ConfigError(std::string key, int line, const std::string& what)
        : Error(format(key, line, what)), key_(std::move(key)), line_(line) {}

    const std::string& key() const noexcept { return key_; }
    int line() const noexcept { return line_; }

private:
    static std::string format(const std::string& key, int line, const std::string& what) {
        std::string out = "config";
        if (line > 0) out += " line " + std::to_string(line);
        if (!key.empty()) out += " key '" + key + "'";
        return out + ": " + what;
    }

    std::string key_;
    int line_;
};

}  // namespace fedegg
