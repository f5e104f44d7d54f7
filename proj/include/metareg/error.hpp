#pragma once

#include <stdexcept>
#include <string>

namespace metareg {

/// Input that violates a documented precondition (bad data, bad config).
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A numerical failure: singular design, overflow, degenerate leverage.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace metareg
