#pragma once

#include <stdexcept>
#include <string>

namespace lgcp {

// Malformed or inconsistent user input (files, configuration, dimensions).
// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// A computation that started from valid input failed to produce a usable
// result (non-convergence, singular systems, infeasible calibrations).
// The CLI maps this to exit code 1.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}
