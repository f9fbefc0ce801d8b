#pragma once

#include <stdexcept>
#include <string>

namespace pkmix {

// Root of every error thrown by the library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
struct dimension_error : error {
    using error::error;
};

// An oracle-only materialization would exceed its configured entry budget.
struct size_limit_error : error {
    using error::error;
};

// A kernel produced NaN or Inf.
struct numeric_error : error {
    using error::error;
};

// Invalid argument values (probabilities, counts, labels, ...).
struct value_error : error {
    using error::error;
};

// Misuse of the autodiff tape.
struct tape_error : error {
    using error::error;
};

// Iterative solver did not converge within its sweep budget.
struct convergence_error : error {
    using error::error;
};

// Malformed configuration text or dataset file.
struct config_error : error {
    using error::error;
};

// A file could not be opened for reading or writing.
struct io_error : error {
    using error::error;
};

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace detail
} // namespace pkmix
