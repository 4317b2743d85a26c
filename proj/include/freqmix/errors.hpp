#pragma once

#include <stdexcept>
#include <string>

namespace freqmix {

/// Thrown when tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an input file cannot be read, written, or decoded.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when malformed text input is rejected (carries a line number).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    explicit ParseError(const std::string& what) : std::runtime_error(what), line_(0) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Thrown when training produces a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace freqmix
