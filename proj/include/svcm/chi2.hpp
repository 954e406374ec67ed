#pragma once

// Chi-square tail probabilities and quantiles.

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "svcm/errors.hpp"

namespace svcm {

/// P(chi2_df > x).
inline double chi2_survival(double x, double df) {
  if (!(df > 0.0)) throw DomainError("chi2_survival: df must be > 0");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

/// q with P(chi2_df > q) = a.
inline double chi2_upper_quantile(double df, double a) {
  if (!(df > 0.0)) throw DomainError("chi2_upper_quantile: df must be > 0");
  if (!(a > 0.0 && a < 1.0))
    throw DomainError("chi2_upper_quantile: tail probability must lie in (0,1), got " + std::to_string(a));
  return 2.0 * boost::math::gamma_q_inv(0.5 * df, a);
}

/// q with P(chi2_df <= q) = a.
inline double chi2_lower_quantile(double df, double a) {
  if (!(a > 0.0 && a < 1.0))
    throw DomainError("chi2_lower_quantile: probability must lie in (0,1), got " + std::to_string(a));
  return 2.0 * boost::math::gamma_p_inv(0.5 * df, a);
}

}  // namespace svcm
