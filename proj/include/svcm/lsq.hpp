#pragma once

// Voxel-wise least squares, residual images and raw coefficient variances.

#include <algorithm>
#include <cstddef>

#include <Eigen/Dense>

#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

inline constexpr double kVarianceFloor = 1e-12;

/// n x N_D image values over the active mask. Column-major storage keeps each
/// voxel's subject vector contiguous.
struct SubjectStack {
  Mask mask;
  Eigen::MatrixXd y;

  Eigen::Index n() const { return y.rows(); }
};

struct CoefficientField {
  Mask mask;
  Eigen::MatrixXd beta;      ///< p x N_D
  Eigen::MatrixXd var_diag;  ///< p x N_D, per-coefficient variances
  int scale_index = 0;
};

inline void check_stack(const SubjectStack& stack) {
  if (stack.y.cols() != stack.mask.n_active())
    throw DomainError("SubjectStack: column count does not match active voxel count");
  if (!stack.y.allFinite()) throw DomainError("SubjectStack: non-finite image values");
}

/// Per-voxel Sigma_y(d, d) plug-in from residuals: n^-1 sum_i r_i(d)^2.
inline Eigen::VectorXd plugin_sigma_y(const Eigen::MatrixXd& residuals) {
  return residuals.colwise().squaredNorm().transpose() / static_cast<double>(residuals.rows());
}

/// var[j, d] = (Omega^-1)_{jj} * Sigma_y(d, d), floored at `floor`.
/// `floored`, when given, receives the number of clamped entries.
inline Eigen::MatrixXd raw_variance(const DesignMatrix& design, const Eigen::VectorXd& sigma_y_diag,
                                    double floor = kVarianceFloor, std::size_t* floored = nullptr) {
  const Eigen::VectorXd scale = design.omega_inv.diagonal();
  Eigen::MatrixXd var = scale * sigma_y_diag.transpose();
  std::size_t clamped = 0;
  for (Eigen::Index c = 0; c < var.cols(); ++c)
    for (Eigen::Index j = 0; j < var.rows(); ++j)
      if (!(var(j, c) >= floor)) {
        var(j, c) = floor;
        ++clamped;
      }
  if (floored) *floored = clamped;
  return var;
}

inline Eigen::MatrixXd residuals(const SubjectStack& stack, const DesignMatrix& design,
                                 const CoefficientField& field) {
  if (stack.n() != design.n || field.beta.cols() != stack.y.cols() || field.beta.rows() != design.p)
    throw DomainError("residuals: dimension mismatch between stack, design and field");
  return stack.y - design.x * field.beta;
}

/// beta(d) = Omega^-1 sum_i x_i y_i(d). var_diag uses the residual plug-in for
/// Sigma_y until a noise model replaces it.
inline CoefficientField ls_fit(const SubjectStack& stack, const DesignMatrix& design) {
  check_stack(stack);
  if (stack.n() != design.n)
    throw DomainError("ls_fit: stack has " + std::to_string(stack.n()) + " subjects, design has " +
                      std::to_string(design.n));
  CoefficientField field;
  field.mask = stack.mask;
  field.scale_index = 0;
  const Eigen::MatrixXd projector = design.omega_inv * design.x.transpose();  // p x n
  field.beta.resize(design.p, stack.y.cols());
  parallel_for(static_cast<std::size_t>(stack.y.cols()), [&](std::size_t b, std::size_t e) {
    for (auto d = static_cast<Eigen::Index>(b); d < static_cast<Eigen::Index>(e); ++d)
      field.beta.col(d).noalias() = projector * stack.y.col(d);
  }, 1024);
  field.var_diag = raw_variance(design, plugin_sigma_y(residuals(stack, design, field)));
  return field;
}

}  // namespace svcm
