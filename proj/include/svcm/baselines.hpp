#pragma once

// Non-adaptive comparison methods:
//   LCE - local-constant Epanechnikov smoothing of the raw LS maps;
//   GKS - Gaussian smoothing of every subject image, then voxel-wise LS.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/fpca.hpp"
#include "svcm/lsq.hpp"
#include "svcm/mass.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

enum class Method { Svcm, Lce, Gks };

inline double epanechnikov(double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

struct LceResult {
  CoefficientField field;
  std::vector<WeightTable> weights;  ///< one table per coefficient (identical rows)
  bool passthrough = false;          ///< empty kernel support, raw estimates returned
};

/// beta~(d0) = sum_m K(|d0 - d_m| / h) beta(d_m) / sum_m K(...), with the
/// variance of the fixed-weight average from the noise model.
inline LceResult lce_smooth(const CoefficientField& raw, double h, const NoiseModel& noise,
                            const DesignMatrix& design) {
  const Mask& mask = raw.mask;
  const Rank nd = mask.n_active();
  const Eigen::Index p = raw.beta.rows();
  LceResult out;
  out.field = raw;
  if (!(h > 0.0)) {
    out.passthrough = true;
    out.weights.assign(static_cast<std::size_t>(p), WeightTable::identity(nd));
    return out;
  }
  const Stencil stencil = make_ball_stencil(mask.grid(), h);
  WeightTable table(nd, std::max<std::size_t>(stencil.size(), 1));
  parallel_for(static_cast<std::size_t>(nd), [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> idx;
    std::vector<double> w;
    Eigen::VectorXd scratch(noise.eta_hat.rows());
    for (std::size_t du = b; du < e; ++du) {
      const auto d = static_cast<Rank>(du);
      idx.clear();
      w.clear();
      double total = 0.0;
      for_each_in_stencil(mask, d, stencil, [&](Rank r, const StencilEntry& se) {
        const double k = epanechnikov(se.dist / h);
        if (k <= 0.0) return;
        idx.push_back(static_cast<std::int32_t>(r));
        w.push_back(k);
        total += k;
      });
      for (double& v : w) v /= total;
      table.set(d, idx, w);
      const double base = weighted_variance(idx, w, noise, 1.0, scratch);
      for (Eigen::Index j = 0; j < p; ++j) {
        double est = 0.0;
        for (std::size_t m = 0; m < idx.size(); ++m) est += w[m] * raw.beta(j, idx[m]);
        out.field.beta(j, d) = est;
        out.field.var_diag(j, d) = std::max(design.omega_inv(j, j) * base, kVarianceFloor);
      }
    }
  }, 64);
  out.weights.assign(static_cast<std::size_t>(p), table);
  return out;
}

/// Each subject image convolved with exp(-r^2 / (2 sigma^2)) truncated at r <= 3 sigma,
/// renormalized over the active voxels reached.
inline SubjectStack gaussian_smooth_stack(const SubjectStack& stack, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_smooth_stack: sigma must be > 0");
  const Mask& mask = stack.mask;
  const Stencil stencil = make_ball_stencil(mask.grid(), 3.0 * sigma, /*closed=*/true);
  SubjectStack out{mask, Eigen::MatrixXd(stack.y.rows(), stack.y.cols())};
  parallel_for(static_cast<std::size_t>(mask.n_active()), [&](std::size_t b, std::size_t e) {
    Eigen::VectorXd acc(stack.y.rows());
    for (std::size_t du = b; du < e; ++du) {
      const auto d = static_cast<Rank>(du);
      acc.setZero();
      double total = 0.0;
      for_each_in_stencil(mask, d, stencil, [&](Rank r, const StencilEntry& se) {
        const double k = std::exp(-0.5 * se.dist * se.dist / (sigma * sigma));
        acc.noalias() += k * stack.y.col(r);
        total += k;
      });
      out.y.col(d) = acc / total;
    }
  }, 64);
  return out;
}

inline CoefficientField gks_pipeline(const SubjectStack& stack, const DesignMatrix& design, double sigma) {
  return ls_fit(gaussian_smooth_stack(stack, sigma), design);
}

}  // namespace svcm
