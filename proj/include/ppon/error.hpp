#pragma once

#include <stdexcept>
#include <string>

namespace ppon {

// Raised when tensor shapes disagree. The message names the offending dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration or argument values (alpha outside [0,1], bad scale, ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File decoding / encoding failures. Messages always carry the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ppon
