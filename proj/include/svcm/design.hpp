#pragma once

// Covariate design algebra: Omega = sum_i x_i x_i^T and its inverse.

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "svcm/errors.hpp"

namespace svcm {

struct DesignMatrix {
  Eigen::MatrixXd x;          ///< n x p, row i = x_i^T
  Eigen::MatrixXd omega;      ///< p x p
  Eigen::MatrixXd omega_inv;  ///< p x p
  Eigen::Index n = 0;
  Eigen::Index p = 0;
};

inline constexpr double kSingularConditionNumber = 1e12;

inline DesignMatrix fit_design(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (p < 1) throw DomainError("fit_design: need at least one covariate column");
  if (n <= p) {
    throw DomainError("fit_design: need more subjects than covariates (n=" + std::to_string(n) +
                      ", p=" + std::to_string(p) + ")");
  }
  if (!x.allFinite()) throw DomainError("fit_design: covariates contain non-finite entries");

  DesignMatrix d;
  d.x = x;
  d.n = n;
  d.p = p;
  d.omega = x.transpose() * x;
  d.omega = 0.5 * (d.omega + d.omega.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.omega);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double largest = ev.maxCoeff();
  const double smallest = ev.minCoeff();
  if (!(smallest > 0.0) || largest / smallest > kSingularConditionNumber) {
    // Columns that load on the near-null direction.
    const Eigen::VectorXd null_dir = eig.eigenvectors().col(0);
    std::ostringstream msg;
    msg << "fit_design: singular design (condition number "
        << (smallest > 0.0 ? largest / smallest : INFINITY) << "); offending columns {";
    bool first = true;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (std::abs(null_dir(j)) > 1e-6) {
        msg << (first ? "" : ",") << j;
        first = false;
      }
    }
    msg << "}";
    throw SingularDesignError(msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(d.omega);
  d.omega_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  d.omega_inv = 0.5 * (d.omega_inv + d.omega_inv.transpose());
  return d;
}

/// Unit basis vector e_j of length p (j is zero-based).
inline Eigen::VectorXd coeff_selector(Eigen::Index j, Eigen::Index p) {
  if (p < 1 || j < 0 || j >= p)
    throw DomainError("coeff_selector: index " + std::to_string(j) + " out of range for p=" +
                      std::to_string(p));
  return Eigen::VectorXd::Unit(p, j);
}

}  // namespace svcm
