#pragma once

// Brute-force reference implementations used only by the tests. They avoid
// the library's fast paths: dense matrices, direct formulas, no stencils.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "svcm/design.hpp"
#include "svcm/fpca.hpp"
#include "svcm/mass.hpp"
#include "svcm/volume.hpp"

namespace oracle {

/// Cyclic Jacobi rotations on a dense symmetric matrix. Eigenvalues descending,
/// eigenvectors as columns.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigen(Eigen::MatrixXd a, int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
  Eigen::VectorXd ev(n);
  Eigen::MatrixXd vec(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ev(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    vec.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return {ev, vec};
}

/// P(chi2_1 <= x) = erf(sqrt(x/2)); P(chi2_2 <= x) = 1 - exp(-x/2).
inline double chi2_cdf_closed(double x, int df) {
  if (df == 1) return std::erf(std::sqrt(x / 2.0));
  if (df == 2) return 1.0 - std::exp(-x / 2.0);
  return std::numeric_limits<double>::quiet_NaN();
}

/// Upper-tail quantile by bisection on the closed-form CDF.
inline double chi2_upper_quantile_bisect(int df, double a) {
  double lo = 0.0, hi = 1.0;
  while (1.0 - chi2_cdf_closed(hi, df) > a) hi *= 2.0;
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (1.0 - chi2_cdf_closed(mid, df) > a) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline double triangle(double u) { return std::max(0.0, 1.0 - std::abs(u)); }

/// Dense N_D x N_D local-linear smoother matrix: row d holds the first row of
/// (Z^T K Z)^-1 Z^T K over all active voxels. Axes with extent 1 or spacing >= h
/// are omitted.
inline Eigen::MatrixXd assembled_smoother(const svcm::Mask& mask, double h) {
  const svcm::Grid3& g = mask.grid();
  std::vector<int> axes;
  for (int a = 0; a < 3; ++a)
    if (g.dims()[a] > 1 && g.spacing()[a] < h) axes.push_back(a);
  const auto q = static_cast<Eigen::Index>(1 + axes.size());
  const svcm::Rank nd = mask.n_active();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(nd, nd);
  for (svcm::Rank d = 0; d < nd; ++d) {
    const auto c0 = g.center(mask.voxel(d));
    Eigen::MatrixXd z(nd, q);
    Eigen::VectorXd k(nd);
    for (svcm::Rank m = 0; m < nd; ++m) {
      const auto c = g.center(mask.voxel(m));
      double kw = 1.0;
      z(m, 0) = 1.0;
      for (int a = 0; a < 3; ++a) kw *= triangle((c[static_cast<std::size_t>(a)] - c0[static_cast<std::size_t>(a)]) / h);
      for (std::size_t a = 0; a < axes.size(); ++a)
        z(m, static_cast<Eigen::Index>(1 + a)) = (c[static_cast<std::size_t>(axes[a])] - c0[static_cast<std::size_t>(axes[a])]) / h;
      k(m) = kw;
    }
    const Eigen::MatrixXd ztk = z.transpose() * k.asDiagonal();
    const Eigen::MatrixXd m = ztk * z;
    s.row(d) = m.fullPivLu().solve(ztk).row(0);
  }
  return s;
}

/// GCV score from the assembled smoother applied to every residual image.
inline double gcv_dense(const Eigen::MatrixXd& resid, const svcm::Mask& mask, double h) {
  const Eigen::MatrixXd s = assembled_smoother(mask, h);
  const Eigen::MatrixXd eta = resid * s.transpose();
  const double rss = (resid - eta).squaredNorm();
  const double denom = 1.0 - s.trace() / static_cast<double>(mask.n_active());
  return rss / (denom * denom);
}

/// Dense Sigma_y = eta^T eta / (n - p) + diag(Sigma_eps).
inline Eigen::MatrixXd dense_sigma_y(const svcm::NoiseModel& nm) {
  Eigen::MatrixXd sy = nm.eta_hat.transpose() * nm.eta_hat / static_cast<double>(nm.n - nm.p);
  sy.diagonal() += nm.sigma_eps;
  return sy;
}

/// Cov(A vec(beta)) with Cov(vec(beta)) = Sigma_y (x) Omega^-1, A[j, j + p m] = w_j(m).
/// `w` is p x N_D (row j = weights of coefficient j at the target voxel).
inline Eigen::MatrixXd kronecker_covariance(const Eigen::MatrixXd& w, const Eigen::MatrixXd& sigma_y,
                                            const Eigen::MatrixXd& omega_inv) {
  const Eigen::Index p = w.rows(), nd = w.cols();
  Eigen::MatrixXd kron(p * nd, p * nd);
  for (Eigen::Index a = 0; a < nd; ++a)
    for (Eigen::Index b = 0; b < nd; ++b) kron.block(a * p, b * p, p, p) = sigma_y(a, b) * omega_inv;
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(p, p * nd);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index m = 0; m < nd; ++m) sel(j, j + p * m) = w(j, m);
  return sel * kron * sel.transpose();
}

/// Dense MASS: every pair of voxels is visited, dist < h selects the ball.
struct DenseMass {
  Eigen::MatrixXd beta, var;
  std::vector<Eigen::MatrixXd> weights;  ///< per coefficient, N_D x N_D, row = target
  std::vector<std::vector<bool>> frozen;  ///< [j][d]
};

inline DenseMass dense_mass(const svcm::CoefficientField& raw, const svcm::ScaleSchedule& sch,
                            const svcm::NoiseModel& nm, const svcm::DesignMatrix& design, int up_to) {
  const svcm::Mask& mask = raw.mask;
  const Eigen::Index p = raw.beta.rows(), nd = raw.beta.cols();
  const Eigen::MatrixXd sy = dense_sigma_y(nm);
  DenseMass st;
  st.beta = raw.beta;
  st.var = raw.var_diag;
  st.weights.assign(static_cast<std::size_t>(p), Eigen::MatrixXd::Identity(nd, nd));
  st.frozen.assign(static_cast<std::size_t>(p), std::vector<bool>(static_cast<std::size_t>(nd), false));
  for (int s = 1; s <= up_to; ++s) {
    const double h = std::pow(sch.c_h, s);
    DenseMass next = st;
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index d = 0; d < nd; ++d) {
        if (st.frozen[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)]) continue;
        Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(nd);
        for (Eigen::Index m = 0; m < nd; ++m) {
          const double dist = mask.distance(d, m);
          if (!(dist < h)) continue;
          const double dstat = std::pow(st.beta(j, d) - st.beta(j, m), 2) / std::max(st.var(j, d), sch.variance_floor);
          w(m) = (1.0 - dist / h) * std::exp(-dstat / sch.c_n);
        }
        w /= w.sum();
        next.weights[static_cast<std::size_t>(j)].row(d) = w;
        next.beta(j, d) = w.dot(raw.beta.row(j));
        next.var(j, d) = std::max(design.omega_inv(j, j) * w.dot(sy * w.transpose()), sch.variance_floor);
      }
    if (s >= sch.stop_check_from) {
      const double cs = sch.c_s[static_cast<std::size_t>(s)];
      for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index d = 0; d < nd; ++d) {
          if (st.frozen[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)]) continue;
          const double dd = std::pow(raw.beta(j, d) - next.beta(j, d), 2) / std::max(raw.var_diag(j, d), sch.variance_floor);
          if (dd > cs) {
            next.beta(j, d) = st.beta(j, d);
            next.var(j, d) = st.var(j, d);
            next.weights[static_cast<std::size_t>(j)].row(d) = st.weights[static_cast<std::size_t>(j)].row(d);
            next.frozen[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] = true;
          }
        }
    }
    st = std::move(next);
  }
  return st;
}

}  // namespace oracle
