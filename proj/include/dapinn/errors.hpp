// SPDX-License-Identifier: Apache-2.0

#ifndef DAPINN_ERRORS_HPP
#define DAPINN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dapinn {

// Shape/arity violations: mismatched operand shapes, non-scalar seeds, ...
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected where a finite value is required.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration (zero-width layer, empty interface set, ...).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Point outside the case geometry, or a metric undefined for the input.
struct range_error : std::runtime_error {
  explicit range_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dapinn

#endif  // DAPINN_ERRORS_HPP
