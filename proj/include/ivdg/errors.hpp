#pragma once

#include <stdexcept>
#include <string>

namespace ivdg {

// Design matrix (or instrument matrix) is rank-deficient at the configured
// relative tolerance; the requested fit has no well-posed solution.
class singular_design_error : public std::runtime_error {
 public:
  explicit singular_design_error(const std::string& what) : std::runtime_error(what) {}
};

// First-stage fitted values are numerically degenerate: the instrument has
// (close to) no explanatory power for the endogenous regressors. Carries the
// offending smallest singular value for diagnostics.
class weak_instrument_error : public std::runtime_error {
 public:
  weak_instrument_error(const std::string& what, double smallest_singular_value)
      : std::runtime_error(what), smallest_singular_value_(smallest_singular_value) {}
  double smallest_singular_value() const { return smallest_singular_value_; }

 private:
  double smallest_singular_value_;
};

// Class labels could not be constructed (degenerate response, empty class).
class labeling_error : public std::runtime_error {
 public:
  explicit labeling_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ivdg
