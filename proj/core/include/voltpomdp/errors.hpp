#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voltpomdp {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    // 1-based line of the offending input, 0 when the position is not known.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& rule) : Error(rule) {}
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class Diverged : public Error {
public:
    using Error::Error;
};

class InvalidModel : public Error {
public:
    using Error::Error;
};

class ImpossibleObservation : public Error {
public:
    using Error::Error;
};

class EpisodeFinished : public Error {
public:
    EpisodeFinished() : Error("step() called after the episode finished; call reset()") {}
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace voltpomdp
