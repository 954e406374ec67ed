#pragma once

// Wald tests on smoothed coefficient maps, cluster detection and prediction.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svcm/chi2.hpp"
#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/fpca.hpp"
#include "svcm/lsq.hpp"
#include "svcm/mass.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

struct Hypothesis {
  Eigen::MatrixXd r1;  ///< r x p, full row rank
  Eigen::VectorXd b0;  ///< r
};

inline Hypothesis make_hypothesis(Eigen::MatrixXd r1, Eigen::VectorXd b0) {
  if (r1.rows() < 1 || r1.rows() > r1.cols()) throw DomainError("hypothesis: need 1 <= r <= p");
  if (b0.size() != r1.rows()) throw DomainError("hypothesis: b0 length must equal rows of R1");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(r1.transpose());
  qr.setThreshold(1e-10);
  if (qr.rank() != r1.rows()) throw DomainError("hypothesis: R1 is not of full row rank");
  return {std::move(r1), std::move(b0)};
}

/// H0: beta_j = value.
inline Hypothesis single_coefficient_hypothesis(Eigen::Index j, Eigen::Index p, double value = 0.0) {
  Eigen::MatrixXd r1 = coeff_selector(j, p).transpose();
  return make_hypothesis(std::move(r1), Eigen::VectorXd::Constant(1, value));
}

struct Cluster {
  std::vector<Rank> voxels;
  std::size_t size() const { return voxels.size(); }
};

struct WaldMap {
  Eigen::VectorXd statistic;  ///< N_D
  Eigen::Index df = 0;
  Eigen::VectorXd p_value;    ///< N_D, in (0, 1]
  std::vector<std::uint8_t> singular;  ///< middle matrix not invertible
  std::vector<Cluster> clusters;
};

/// Covariance of the smoothed coefficient vector at d0 when each coefficient j
/// is the weighted sum sum_m w_j(d0, d_m) beta_j(d_m) of raw estimates:
///   sum_{m,m'} Sigma_y(d_m, d_m') diag(w_m) Omega^-1 diag(w_m').
/// Entry (j,k) = Omega^-1_jk [ (n-p)^-1 a_j^T a_k + sum_m w_jm w_km Sigma_eps(d_m) ],
/// a_j = sum_m w_jm eta(d_m). Negative eigenvalues are clipped; `clipped`
/// reports whether that happened.
inline Eigen::MatrixXd weighted_covariance(std::span<const WeightTable> weights, const NoiseModel& noise,
                                           const DesignMatrix& design, Rank d0, bool* clipped = nullptr) {
  const auto p = static_cast<Eigen::Index>(weights.size());
  if (p != design.p) throw DomainError("weighted_covariance: weight tables do not match p");
  const Eigen::Index n = noise.eta_hat.rows();
  Eigen::MatrixXd a(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto idx = weights[static_cast<std::size_t>(j)].indices(d0);
    const auto w = weights[static_cast<std::size_t>(j)].weights(d0);
    a.col(j).setZero();
    for (std::size_t s = 0; s < idx.size(); ++s) a.col(j).noalias() += w[s] * noise.eta_hat.col(idx[s]);
  }
  Eigen::MatrixXd inner = a.transpose() * a / static_cast<double>(noise.n - noise.p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index k = j; k < p; ++k) {
      // Both rows are sorted by rank: merge to find shared voxels.
      const auto ij = weights[static_cast<std::size_t>(j)].indices(d0);
      const auto wj = weights[static_cast<std::size_t>(j)].weights(d0);
      const auto ik = weights[static_cast<std::size_t>(k)].indices(d0);
      const auto wk = weights[static_cast<std::size_t>(k)].weights(d0);
      double eps = 0.0;
      std::size_t x = 0, y = 0;
      while (x < ij.size() && y < ik.size()) {
        if (ij[x] < ik[y]) {
          ++x;
        } else if (ik[y] < ij[x]) {
          ++y;
        } else {
          eps += wj[x] * wk[y] * noise.sigma_eps(ij[x]);
          ++x;
          ++y;
        }
      }
      inner(j, k) += eps;
      if (k != j) inner(k, j) += eps;
    }
  }
  Eigen::MatrixXd cov = design.omega_inv.cwiseProduct(inner);
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    if (clipped) *clipped = true;
    const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
    cov = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  } else if (clipped) {
    *clipped = false;
  }
  return cov;
}

inline Eigen::MatrixXd mass_covariance(const MassState& state, const NoiseModel& noise, const DesignMatrix& design,
                                       Rank d0, bool* clipped = nullptr) {
  return weighted_covariance(state.weights, noise, design, d0, clipped);
}

/// Sigma_y(d, d) Omega^-1 for an unsmoothed field.
inline Eigen::MatrixXd raw_covariance(const Eigen::VectorXd& sigma_y_diag, const DesignMatrix& design, Rank d0) {
  return sigma_y_diag(d0) * design.omega_inv;
}

using CovarianceFn = std::function<Eigen::MatrixXd(Rank)>;

/// Covariance built from the diagonal variances only; exact for single-coefficient tests.
inline CovarianceFn diagonal_covariance(const CoefficientField& field) {
  return [&field](Rank d) -> Eigen::MatrixXd { return field.var_diag.col(d).asDiagonal(); };
}

inline double safe_p_value(double p) {
  if (std::isnan(p)) return 1.0;
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

/// W = (R1 b - b0)^T (R1 Sigma R1^T)^-1 (R1 b - b0), p = P(chi2_r > W).
inline WaldMap wald_test(const CoefficientField& field, const CovarianceFn& cov_fn, const Hypothesis& hyp) {
  if (hyp.r1.cols() != field.beta.rows()) throw DomainError("wald_test: R1 column count != p");
  const Rank nd = field.mask.n_active();
  WaldMap out;
  out.df = hyp.r1.rows();
  out.statistic.resize(nd);
  out.p_value.resize(nd);
  out.singular.assign(static_cast<std::size_t>(nd), 0);
  parallel_for(static_cast<std::size_t>(nd), [&](std::size_t b, std::size_t e) {
    for (std::size_t du = b; du < e; ++du) {
      const auto d = static_cast<Rank>(du);
      const Eigen::VectorXd diff = hyp.r1 * field.beta.col(d) - hyp.b0;
      const Eigen::MatrixXd mid = hyp.r1 * cov_fn(d) * hyp.r1.transpose();
      Eigen::LDLT<Eigen::MatrixXd> ldlt(mid);
      const double scale = mid.diagonal().cwiseAbs().maxCoeff();
      bool ok = ldlt.info() == Eigen::Success && scale > 0.0 && ldlt.isPositive() &&
                ldlt.vectorD().minCoeff() > 1e-14 * scale;
      if (!ok) {
        out.statistic(d) = 0.0;
        out.p_value(d) = 1.0;
        out.singular[du] = 1;
        continue;
      }
      const double w = std::max(0.0, diff.dot(ldlt.solve(diff)));
      out.statistic(d) = w;
      out.p_value(d) = safe_p_value(chi2_survival(w, static_cast<double>(out.df)));
    }
  }, 256);
  return out;
}

/// Voxels with p < alpha grouped into connected components of at least min_size voxels.
inline std::vector<Cluster> detect_clusters(const WaldMap& wald, const Mask& mask, double alpha = 0.05,
                                            std::size_t min_size = 50, Connectivity conn = Connectivity::Face6) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("detect_clusters: alpha must lie in (0,1)");
  if (min_size < 1) throw DomainError("detect_clusters: min_size must be >= 1");
  std::vector<Rank> hits;
  for (Rank d = 0; d < wald.p_value.size(); ++d)
    if (wald.p_value(d) < alpha) hits.push_back(d);
  std::vector<Cluster> out;
  for (auto& comp : connected_components(mask, hits, conn))
    if (comp.size() >= min_size) out.push_back({std::move(comp)});
  return out;
}

/// y_hat(d) = x_new^T beta(d).
inline Eigen::VectorXd predict_subject(const CoefficientField& field, const Eigen::VectorXd& x_new) {
  if (x_new.size() != field.beta.rows())
    throw DomainError("predict_subject: covariate vector has length " + std::to_string(x_new.size()) +
                      ", expected " + std::to_string(field.beta.rows()));
  return field.beta.transpose() * x_new;
}

}  // namespace svcm
