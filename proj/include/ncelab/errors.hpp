#pragma once

#include <stdexcept>
#include <string>

namespace ncelab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An integrand evaluated to NaN/Inf, or its tail is not integrable on the grid.
struct NonFiniteIntegrand : Error {
  using Error::Error;
};

/// Parameter outside the family's domain (e.g. variance <= 0, |corr| >= 1).
struct InvalidParameter : Error {
  using Error::Error;
};

/// Histogram free weights violate the simplex constraint.
struct NormalizationViolation : Error {
  using Error::Error;
};

/// Function argument outside its mathematical domain (e.g. phi at x <= 0).
struct DomainError : Error {
  using Error::Error;
};

/// I_w (or J) is singular / too ill-conditioned to invert.
struct DegenerateInformation : Error {
  using Error::Error;
};

/// Operation not defined for this model (e.g. Cramer-Rao of an unnormalized model).
struct UnsupportedModel : Error {
  using Error::Error;
};

/// A density ratio overflowed while evaluating a sample-based estimator.
struct NonFiniteRatio : Error {
  using Error::Error;
};

/// Scalar root bracket does not change sign.
struct NoRoot : Error {
  using Error::Error;
};

/// Every candidate in an optimization grid was non-finite.
struct AllCandidatesInfeasible : Error {
  using Error::Error;
};

/// Backtracking line search could not find a decrease.
struct LineSearchFailure : Error {
  using Error::Error;
};

/// Optimizer hit its iteration cap before reaching tolerance.
struct NonConvergence : Error {
  using Error::Error;
};

/// Invalid or incomplete experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace ncelab
