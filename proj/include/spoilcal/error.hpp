#pragma once

#include <stdexcept>
#include <string>

namespace spoilcal {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses name the failure class.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    SamplingError(const std::string& what, std::size_t eligible)
        : Error(what), eligible_(eligible) {}
    std::size_t eligible() const { return eligible_; }

private:
    std::size_t eligible_;
};

class DegenerateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::size_t violations)
        : Error(what), violations_(violations) {}
    std::size_t violations() const { return violations_; }

private:
    std::size_t violations_;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

class SegmentationError : public Error {
public:
    using Error::Error;
};

} // namespace spoilcal
