#pragma once

#include <stdexcept>
#include <string>

namespace bbmtube {

// Argument outside the mathematical domain of an operation (t < 0, p >= 1, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A path evaluator produced a non-finite value.
class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid simulation, grid or experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An internal invariant of a simulation was broken (e.g. a live particle
// found outside the tube).
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Not enough data to form an estimate.
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bbmtube
