#pragma once

// Spatial noise model: local-linear smoothing of residual images, GCV bandwidth
// choice, Sigma_eps / Sigma_eta estimates, and functional PCA via the n x n
// Gram matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/lsq.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

inline double triangle_kernel(double u) { return std::max(0.0, 1.0 - std::abs(u)); }

struct LocalLinearWeights {
  Rank target = 0;
  double bandwidth_h = 0.0;
  std::vector<std::pair<Rank, double>> contributors;  ///< ascending rank
  bool fallback = false;  ///< local-constant weights were used
};

/// Product-kernel local-linear smoother on a mask. Axes with a single voxel, or
/// with spacing >= h, are dropped from the local design, so 2-D images use a
/// 3x3 system.
class LocalLinearSmoother {
 public:
  LocalLinearSmoother(const Mask& mask, double h) : mask_(&mask), h_(h) {
    if (!(h > 0.0)) throw DomainError("local-linear bandwidth must be > 0");
    const Grid3& g = mask.grid();
    int reach[3];
    for (int a = 0; a < 3; ++a) {
      // |offset| < h strictly, since K_loc(1) = 0.
      const double r = h / g.spacing()[a];
      int m = static_cast<int>(std::ceil(r)) - 1;
      reach[a] = std::clamp(m, 0, g.dims()[a] - 1);
      // An axis with no neighbour inside the kernel carries no slope information.
      if (reach[a] > 0) axes_.push_back(a);
    }
    for (int dk = -reach[2]; dk <= reach[2]; ++dk)
      for (int dj = -reach[1]; dj <= reach[1]; ++dj)
        for (int di = -reach[0]; di <= reach[0]; ++di) {
          const double u[3] = {di * g.spacing()[0] / h, dj * g.spacing()[1] / h, dk * g.spacing()[2] / h};
          const double k = triangle_kernel(u[0]) * triangle_kernel(u[1]) * triangle_kernel(u[2]);
          if (k <= 0.0) continue;
          box_.push_back({di, dj, dk, k, {u[0], u[1], u[2]}});
        }
  }

  double bandwidth() const { return h_; }
  int system_size() const { return 1 + static_cast<int>(axes_.size()); }

  /// Fills the weight row for `target`; returns true when the local-linear
  /// system was singular and local-constant weights were used instead.
  bool weights(Rank target, std::vector<Rank>& idx, std::vector<double>& w) const {
    idx.clear();
    w.clear();
    const Grid3& g = mask_->grid();
    const Index3 c = g.coords(mask_->voxel(target));
    const int q = system_size();
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    zbuf_.clear();
    for (const BoxEntry& e : box_) {
      const int i = c.i + e.di, j = c.j + e.dj, k = c.k + e.dk;
      if (!g.contains(i, j, k)) continue;
      const Rank r = mask_->rank(g.linear(i, j, k));
      if (r < 0) continue;
      Eigen::Vector4d z = Eigen::Vector4d::Zero();
      z(0) = 1.0;
      for (std::size_t a = 0; a < axes_.size(); ++a) z(1 + static_cast<int>(a)) = e.u[axes_[a]];
      m.noalias() += e.k * z * z.transpose();
      idx.push_back(r);
      w.push_back(e.k);
      zbuf_.push_back(z);
    }
    const Eigen::MatrixXd mq = m.topLeftCorner(q, q);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mq);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-10 * hi)) {
      double total = 0.0;
      for (double v : w) total += v;
      for (double& v : w) v /= total;
      return true;
    }
    const Eigen::VectorXd row = eig.eigenvectors() *
                                eig.eigenvalues().cwiseInverse().asDiagonal() *
                                eig.eigenvectors().row(0).transpose();
    for (std::size_t s = 0; s < w.size(); ++s) w[s] *= zbuf_[s].head(q).dot(row);
    return false;
  }

 private:
  struct BoxEntry {
    int di, dj, dk;
    double k;
    double u[3];
  };
  const Mask* mask_;
  double h_;
  std::vector<int> axes_;
  std::vector<BoxEntry> box_;
  mutable std::vector<Eigen::Vector4d, Eigen::aligned_allocator<Eigen::Vector4d>> zbuf_;
};

inline LocalLinearWeights local_linear_weights(const Mask& mask, Rank target, double h) {
  if (target < 0 || target >= mask.n_active()) throw DomainError("local_linear_weights: bad target rank");
  LocalLinearSmoother sm(mask, h);
  std::vector<Rank> idx;
  std::vector<double> w;
  LocalLinearWeights out;
  out.target = target;
  out.bandwidth_h = h;
  out.fallback = sm.weights(target, idx, w);
  out.contributors.reserve(idx.size());
  for (std::size_t s = 0; s < idx.size(); ++s) out.contributors.emplace_back(idx[s], w[s]);
  return out;
}

struct SmoothingResult {
  Eigen::MatrixXd eta_hat;  ///< n x N_D
  double trace = 0.0;       ///< tr(S), sum of self-weights
  double rss = 0.0;         ///< sum_i |R_i - S R_i|^2
  std::size_t fallback_voxels = 0;
};

/// eta_i = S r_i with the geometry-only smoothing matrix S shared by all subjects.
inline SmoothingResult smooth_residuals(const Eigen::MatrixXd& resid, const Mask& mask, double h) {
  if (resid.cols() != mask.n_active()) throw DomainError("smooth_residuals: residual columns != N_D");
  const LocalLinearSmoother sm(mask, h);
  const Eigen::Index nd = resid.cols();
  SmoothingResult out;
  out.eta_hat.resize(resid.rows(), nd);
  std::vector<double> self_w(static_cast<std::size_t>(nd)), rss(static_cast<std::size_t>(nd));
  std::vector<std::uint8_t> flag(static_cast<std::size_t>(nd), 0);
  parallel_for(static_cast<std::size_t>(nd), [&](std::size_t b, std::size_t e) {
    const LocalLinearSmoother local = sm;  // per-thread scratch buffers
    std::vector<Rank> idx;
    std::vector<double> w;
    Eigen::VectorXd acc(resid.rows());
    for (std::size_t d = b; d < e; ++d) {
      const auto target = static_cast<Rank>(d);
      flag[d] = local.weights(target, idx, w) ? 1 : 0;
      acc.setZero();
      double sw = 0.0;
      for (std::size_t s = 0; s < idx.size(); ++s) {
        acc.noalias() += w[s] * resid.col(idx[s]);
        if (idx[s] == target) sw = w[s];
      }
      out.eta_hat.col(target) = acc;
      self_w[d] = sw;
      rss[d] = (resid.col(target) - acc).squaredNorm();
    }
  }, 64);
  for (Eigen::Index d = 0; d < nd; ++d) {
    out.trace += self_w[d];
    out.rss += rss[d];
    out.fallback_voxels += flag[d];
  }
  return out;
}

struct GcvResult {
  double h = 0.0;
  std::vector<double> candidates;
  std::vector<double> scores;  ///< NaN for disqualified candidates
  std::vector<double> traces;
};

inline std::vector<double> default_gcv_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 8; ++k) grid.push_back(std::pow(1.25, k));
  return grid;
}

/// GCV(h) = RSS(h) / (1 - tr(S_h)/N_D)^2; the minimizer wins, ties go to the smaller h.
inline GcvResult gcv_select(const Eigen::MatrixXd& resid, const Mask& mask, const std::vector<double>& candidates) {
  if (candidates.empty()) throw DomainError("gcv_select: empty candidate list");
  for (double h : candidates)
    if (!(h > 0.0)) throw DomainError("gcv_select: bandwidth candidates must be > 0");
  GcvResult out;
  out.candidates = candidates;
  const double nd = static_cast<double>(mask.n_active());
  double best = std::numeric_limits<double>::infinity();
  std::optional<double> best_h;
  for (double h : candidates) {
    const SmoothingResult sm = smooth_residuals(resid, mask, h);
    out.traces.push_back(sm.trace);
    const double denom = 1.0 - sm.trace / nd;
    if (!(denom > 0.0)) {
      out.scores.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double score = sm.rss / (denom * denom);
    out.scores.push_back(score);
    if (score < best || (score == best && best_h && h < *best_h)) {
      best = score;
      best_h = h;
    }
  }
  if (!best_h) throw DomainError("gcv_select: every bandwidth candidate has tr(S) >= N_D");
  out.h = *best_h;
  return out;
}

/// Sigma_eps(d, d) = n^-1 sum_i (r_i(d) - eta_i(d))^2.
inline Eigen::VectorXd estimate_sigma_eps(const Eigen::MatrixXd& resid, const Eigen::MatrixXd& eta_hat) {
  if (resid.rows() != eta_hat.rows() || resid.cols() != eta_hat.cols())
    throw DomainError("estimate_sigma_eps: shape mismatch");
  return (resid - eta_hat).colwise().squaredNorm().transpose() / static_cast<double>(resid.rows());
}

inline Eigen::VectorXd estimate_sigma_eps(const SubjectStack& stack, const DesignMatrix& design,
                                          const CoefficientField& field, const Eigen::MatrixXd& eta_hat) {
  return estimate_sigma_eps(residuals(stack, design, field), eta_hat);
}

/// Sigma_eta(d, d') = (n - p)^-1 sum_i eta_i(d) eta_i(d').
inline double sigma_eta_at(const Eigen::MatrixXd& eta_hat, Eigen::Index n, Eigen::Index p, Rank d, Rank d2) {
  if (n <= p) throw DomainError("sigma_eta_at: need n > p");
  return eta_hat.col(d).dot(eta_hat.col(d2)) / static_cast<double>(n - p);
}

struct EigenDecomposition {
  Eigen::VectorXd eigenvalues;     ///< descending, positive part of the spectrum
  Eigen::MatrixXd eigenfunctions;  ///< K x N_D, unit discrete norm
  Eigen::Index retained = 0;       ///< L_S
};

/// Gram matrix V^T V with V = eta^T, accumulated over fixed column blocks.
inline Eigen::MatrixXd gram_matrix(const Eigen::MatrixXd& eta_hat) {
  constexpr Eigen::Index kBlock = 2048;
  const Eigen::Index nd = eta_hat.cols(), n = eta_hat.rows();
  const Eigen::Index blocks = (nd + kBlock - 1) / kBlock;
  std::vector<Eigen::MatrixXd> partial(static_cast<std::size_t>(blocks));
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      const Eigen::Index start = static_cast<Eigen::Index>(k) * kBlock;
      const Eigen::Index len = std::min(kBlock, nd - start);
      const auto blk = eta_hat.middleCols(start, len);
      partial[k] = blk * blk.transpose();
    }
  }, 1);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (const auto& part : partial) g += part;
  return 0.5 * (g + g.transpose());
}

/// Eigenpairs of Sigma_eta from the n x n Gram matrix; lambda = mu / (n - p),
/// psi = V xi normalized to sum_m psi(d_m)^2 V(d_m) = 1, largest-magnitude entry positive.
/// L_S is the smallest L whose cumulative eigenvalue share reaches cum_threshold.
inline EigenDecomposition eigendecompose(const Eigen::MatrixXd& eta_hat, const Mask& mask, Eigen::Index p,
                                         double cum_threshold = 0.80, bool center = false) {
  const Eigen::Index n = eta_hat.rows();
  if (n < 2) throw DomainError("eigendecompose: need at least two subjects");
  if (n <= p) throw DomainError("eigendecompose: need n > p");
  if (eta_hat.cols() != mask.n_active()) throw DomainError("eigendecompose: eta columns != N_D");
  Eigen::MatrixXd centered;
  const Eigen::MatrixXd* v = &eta_hat;
  if (center) {
    centered = eta_hat.rowwise() - eta_hat.colwise().mean();
    v = &centered;
  }
  const Eigen::MatrixXd g = gram_matrix(*v);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  const Eigen::VectorXd mu = eig.eigenvalues().reverse();
  const Eigen::MatrixXd xi = eig.eigenvectors().rowwise().reverse();
  const double tol = std::max(mu.size() > 0 ? mu(0) : 0.0, 0.0) * 1e-12 * static_cast<double>(n);

  EigenDecomposition out;
  Eigen::Index k = 0;
  while (k < mu.size() && mu(k) > tol && mu(k) > 0.0) ++k;
  if (k == 0) return out;
  const double vol = mask.grid().voxel_volume();
  out.eigenvalues = mu.head(k) / static_cast<double>(n - p);
  out.eigenfunctions.resize(k, v->cols());
  for (Eigen::Index l = 0; l < k; ++l) {
    Eigen::RowVectorXd psi = xi.col(l).transpose() * (*v);
    const double norm = std::sqrt(psi.squaredNorm() * vol);
    psi /= norm;
    Eigen::Index at = 0;
    psi.cwiseAbs().maxCoeff(&at);
    if (psi(at) < 0.0) psi = -psi;
    out.eigenfunctions.row(l) = psi;
  }
  const double total = out.eigenvalues.sum();
  double running = 0.0;
  out.retained = k;
  for (Eigen::Index l = 0; l < k; ++l) {
    running += out.eigenvalues(l);
    if (running / total >= cum_threshold - 1e-15) {
      out.retained = l + 1;
      break;
    }
  }
  return out;
}

/// xi_{i,l} = sum_m eta_i(d_m) psi_l(d_m) V(d_m).
inline Eigen::MatrixXd fpc_scores(const Eigen::MatrixXd& eta_hat, const Eigen::MatrixXd& eigenfunctions,
                                  const Mask& mask) {
  if (eigenfunctions.rows() == 0) return Eigen::MatrixXd::Zero(eta_hat.rows(), 0);
  if (eigenfunctions.cols() != eta_hat.cols()) throw DomainError("fpc_scores: eigenfunction length != N_D");
  return eta_hat * eigenfunctions.transpose() * mask.grid().voxel_volume();
}

struct NoiseModelOptions {
  std::vector<double> gcv_grid = default_gcv_grid();
  double cum_threshold = 0.80;
  bool center = false;
  /// Skip GCV and use this bandwidth.
  std::optional<double> fixed_bandwidth;
};

struct NoiseModel {
  Eigen::MatrixXd eta_hat;         ///< n x N_D
  Eigen::VectorXd sigma_eps;       ///< N_D
  Eigen::VectorXd eigenvalues;     ///< L_S, descending
  Eigen::VectorXd all_eigenvalues; ///< every positive eigenvalue
  Eigen::MatrixXd eigenfunctions;  ///< L_S x N_D
  Eigen::MatrixXd scores;          ///< n x L_S
  double chosen_h = 0.0;
  double cum_threshold = 0.80;
  Eigen::Index n = 0, p = 0;
  GcvResult gcv;
  std::size_t fallback_voxels = 0;

  double sigma_eta(Rank d, Rank d2) const { return sigma_eta_at(eta_hat, n, p, d, d2); }
  Eigen::VectorXd sigma_eta_diag() const {
    return eta_hat.colwise().squaredNorm().transpose() / static_cast<double>(n - p);
  }
  /// Sigma_y(d, d) = Sigma_eta(d, d) + Sigma_eps(d, d).
  Eigen::VectorXd sigma_y_diag() const { return sigma_eta_diag() + sigma_eps; }
  Eigen::Index retained() const { return eigenvalues.size(); }
};

inline NoiseModel fit_noise_model(const SubjectStack& stack, const DesignMatrix& design,
                                  const CoefficientField& raw, const NoiseModelOptions& opt = {}) {
  const Eigen::MatrixXd resid = residuals(stack, design, raw);
  NoiseModel nm;
  nm.n = design.n;
  nm.p = design.p;
  nm.cum_threshold = opt.cum_threshold;
  if (opt.fixed_bandwidth) {
    nm.chosen_h = *opt.fixed_bandwidth;
  } else {
    nm.gcv = gcv_select(resid, stack.mask, opt.gcv_grid);
    nm.chosen_h = nm.gcv.h;
  }
  SmoothingResult sm = smooth_residuals(resid, stack.mask, nm.chosen_h);
  nm.fallback_voxels = sm.fallback_voxels;
  nm.eta_hat = std::move(sm.eta_hat);
  nm.sigma_eps = estimate_sigma_eps(resid, nm.eta_hat);
  EigenDecomposition ed = eigendecompose(nm.eta_hat, stack.mask, design.p, opt.cum_threshold, opt.center);
  nm.all_eigenvalues = ed.eigenvalues;
  nm.eigenvalues = ed.eigenvalues.head(ed.retained);
  nm.eigenfunctions = ed.eigenfunctions.topRows(ed.retained);
  nm.scores = fpc_scores(nm.eta_hat, nm.eigenfunctions, stack.mask);
  return nm;
}

}  // namespace svcm
