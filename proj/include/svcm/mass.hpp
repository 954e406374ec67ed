#pragma once

// Multiscale adaptive sequential smoothing (MASS) of voxel-wise coefficient maps.
//
// Each coefficient map is smoothed over nested balls of radius h_s = c_h^s.
// Weights combine a location kernel with a statistical kernel of the scaled
// squared difference between previous-scale estimates, so neighbors across an
// edge are switched off. Estimates are always weighted sums of the raw
// least-squares map; a per-voxel stop check freezes coefficients that drift
// too far from their raw estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svcm/chi2.hpp"
#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/fpca.hpp"
#include "svcm/lsq.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

enum class QuantileConvention { Upper, Lower };
enum class StatKernel { Exponential, Truncated };

struct ScheduleOptions {
  double c_h = 1.10;
  int max_step = 10;  ///< S
  QuantileConvention cn_convention = QuantileConvention::Lower;
  std::optional<double> cn_override;  ///< +inf disables the statistical kernel
  QuantileConvention cs_convention = QuantileConvention::Upper;
  int stop_check_from = 2;
  double variance_floor = kVarianceFloor;
  StatKernel kst = StatKernel::Exponential;
};

struct ScaleSchedule {
  double c_h = 1.10;
  int max_step = 10;
  std::vector<double> h;    ///< h[0] = 0, h[s] = c_h^s
  double c_n = 1.0;
  std::vector<double> c_s;  ///< c_s[s] for s >= 1; c_s[0] unused
  int stop_check_from = 2;
  double variance_floor = kVarianceFloor;
  StatKernel kst = StatKernel::Exponential;
};

inline double chi2_quantile(QuantileConvention conv, double a) {
  return conv == QuantileConvention::Upper ? chi2_upper_quantile(1.0, a) : chi2_lower_quantile(1.0, a);
}

inline ScaleSchedule make_schedule(Eigen::Index n, const ScheduleOptions& opt = {}) {
  if (!(opt.c_h > 1.0)) throw DomainError("schedule: c_h must be > 1");
  if (opt.max_step < 0) throw DomainError("schedule: S must be >= 0");
  if (!(opt.variance_floor > 0.0)) throw DomainError("schedule: variance floor must be > 0");
  if (opt.stop_check_from < 1) throw DomainError("schedule: stop_check_from must be >= 1");
  ScaleSchedule s;
  s.c_h = opt.c_h;
  s.max_step = opt.max_step;
  s.stop_check_from = opt.stop_check_from;
  s.variance_floor = opt.variance_floor;
  s.kst = opt.kst;
  s.h.push_back(0.0);
  s.c_s.push_back(0.0);
  for (int k = 1; k <= opt.max_step; ++k) {
    s.h.push_back(std::pow(opt.c_h, k));
    s.c_s.push_back(chi2_quantile(opt.cs_convention, 0.80 / k));
  }
  s.c_n = opt.cn_override ? *opt.cn_override
                          : std::pow(static_cast<double>(n), 0.4) * chi2_quantile(opt.cn_convention, 0.80);
  if (!(s.c_n > 0.0)) throw DomainError("schedule: C_n must be > 0");
  return s;
}

/// D = (b0 - b1)^2 / var0, with var0 floored.
inline double similarity(double prev_d0, double prev_d1, double var_d0, double floor = kVarianceFloor) {
  const double diff = prev_d0 - prev_d1;
  return diff * diff / std::max(var_d0, floor);
}

inline double stat_kernel(double u, StatKernel kst) {
  if (kst == StatKernel::Exponential) return std::exp(-u);
  return std::clamp(2.0 * (1.0 - u), 0.0, 1.0);
}

/// omega = K_loc(dist / h) * K_st(D / C_n) with K_loc(u) = (1 - u)_+.
inline double adaptive_weight(double dist, double h, double d_stat, double c_n,
                              StatKernel kst = StatKernel::Exponential) {
  if (!(h > 0.0)) throw DomainError("adaptive_weight: h must be > 0");
  const double loc = std::max(0.0, 1.0 - dist / h);
  if (loc == 0.0) return 0.0;
  if (std::isinf(c_n)) return loc;
  return loc * stat_kernel(d_stat / c_n, kst);
}

/// Normalized smoothing weights per voxel, fixed row stride.
class WeightTable {
 public:
  WeightTable() = default;
  WeightTable(Rank n_voxels, std::size_t stride)
      : stride_(stride),
        count_(static_cast<std::size_t>(n_voxels), 0),
        index_(static_cast<std::size_t>(n_voxels) * stride),
        weight_(static_cast<std::size_t>(n_voxels) * stride) {}

  static WeightTable identity(Rank n_voxels) {
    WeightTable t(n_voxels, 1);
    for (Rank d = 0; d < n_voxels; ++d) {
      t.index_[static_cast<std::size_t>(d)] = static_cast<std::int32_t>(d);
      t.weight_[static_cast<std::size_t>(d)] = 1.0;
      t.count_[static_cast<std::size_t>(d)] = 1;
    }
    return t;
  }

  Rank n_voxels() const { return static_cast<Rank>(count_.size()); }
  std::size_t stride() const { return stride_; }

  std::span<const std::int32_t> indices(Rank d) const {
    return {index_.data() + static_cast<std::size_t>(d) * stride_, count_[static_cast<std::size_t>(d)]};
  }
  std::span<const double> weights(Rank d) const {
    return {weight_.data() + static_cast<std::size_t>(d) * stride_, count_[static_cast<std::size_t>(d)]};
  }

  void set(Rank d, std::span<const std::int32_t> idx, std::span<const double> w) {
    if (idx.size() > stride_ || idx.size() != w.size()) throw DomainError("WeightTable: row too long");
    const std::size_t base = static_cast<std::size_t>(d) * stride_;
    std::copy(idx.begin(), idx.end(), index_.begin() + static_cast<std::ptrdiff_t>(base));
    std::copy(w.begin(), w.end(), weight_.begin() + static_cast<std::ptrdiff_t>(base));
    count_[static_cast<std::size_t>(d)] = static_cast<std::uint32_t>(idx.size());
  }

 private:
  std::size_t stride_ = 0;
  std::vector<std::uint32_t> count_;
  std::vector<std::int32_t> index_;
  std::vector<double> weight_;
};

/// Variance of sum_m w_m beta_j(d_m) under the Stage-I noise model:
/// (Omega^-1)_jj [ sum_{m,m'} w_m w_m' Sigma_eta(d_m, d_m') + sum_m w_m^2 Sigma_eps(d_m) ].
/// The eta part is evaluated as (n-p)^-1 |sum_m w_m eta(d_m)|^2.
inline double weighted_variance(std::span<const std::int32_t> idx, std::span<const double> w,
                                const NoiseModel& noise, double omega_inv_jj, Eigen::VectorXd& scratch) {
  scratch.setZero(noise.eta_hat.rows());
  double eps = 0.0;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    scratch.noalias() += w[s] * noise.eta_hat.col(idx[s]);
    eps += w[s] * w[s] * noise.sigma_eps(idx[s]);
  }
  return omega_inv_jj * (scratch.squaredNorm() / static_cast<double>(noise.n - noise.p) + eps);
}

struct MassState {
  CoefficientField raw;
  CoefficientField current;
  std::vector<std::uint8_t> frozen;  ///< index j + p * d
  std::vector<int> stopped_at;       ///< scale whose check froze (j, d); S if never frozen
  std::vector<WeightTable> weights;  ///< per coefficient, weights behind `current`

  Eigen::Index p() const { return raw.beta.rows(); }
  std::size_t cell(Eigen::Index j, Rank d) const { return static_cast<std::size_t>(j + p() * d); }
  bool is_frozen(Eigen::Index j, Rank d) const { return frozen[cell(j, d)] != 0; }
};

inline MassState initial_state(const CoefficientField& raw, int max_step) {
  if (raw.scale_index != 0) throw DomainError("MASS: raw field must have scale_index 0");
  MassState st;
  st.raw = raw;
  st.current = raw;
  const Rank nd = raw.mask.n_active();
  st.frozen.assign(static_cast<std::size_t>(raw.beta.rows() * nd), 0);
  st.stopped_at.assign(st.frozen.size(), max_step);
  st.weights.assign(static_cast<std::size_t>(raw.beta.rows()), WeightTable::identity(nd));
  return st;
}

/// One smoothing pass at scale s = state.current.scale_index + 1.
inline MassState mass_sweep(const MassState& state, const ScaleSchedule& schedule, const NoiseModel& noise,
                            const DesignMatrix& design) {
  const int s = state.current.scale_index + 1;
  if (s > schedule.max_step) throw DomainError("mass_sweep: already at the last scale");
  const Mask& mask = state.raw.mask;
  const Eigen::Index p = state.p();
  const Rank nd = mask.n_active();
  if (noise.eta_hat.cols() != nd || design.p != p) throw DomainError("mass_sweep: inconsistent inputs");
  const double h = schedule.h[static_cast<std::size_t>(s)];
  const Stencil stencil = make_ball_stencil(mask.grid(), h);

  MassState next;
  next.raw = state.raw;
  next.current = state.current;
  next.current.scale_index = s;
  next.frozen = state.frozen;
  next.stopped_at = state.stopped_at;
  next.weights.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) next.weights.emplace_back(nd, std::max<std::size_t>(stencil.size(), 1));

  const Eigen::MatrixXd& prev = state.current.beta;
  const Eigen::MatrixXd& prev_var = state.current.var_diag;
  parallel_for(static_cast<std::size_t>(nd), [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> idx;
    std::vector<double> loc, w;
    Eigen::VectorXd scratch(noise.eta_hat.rows());
    for (std::size_t du = b; du < e; ++du) {
      const auto d = static_cast<Rank>(du);
      idx.clear();
      loc.clear();
      for_each_in_stencil(mask, d, stencil, [&](Rank r, const StencilEntry& se) {
        idx.push_back(static_cast<std::int32_t>(r));
        loc.push_back(std::max(0.0, 1.0 - se.dist / h));
      });
      for (Eigen::Index j = 0; j < p; ++j) {
        auto& table = next.weights[static_cast<std::size_t>(j)];
        if (state.is_frozen(j, d)) {
          table.set(d, state.weights[static_cast<std::size_t>(j)].indices(d),
                    state.weights[static_cast<std::size_t>(j)].weights(d));
          continue;
        }
        w.resize(idx.size());
        double total = 0.0;
        const double center = prev(j, d);
        const double var0 = prev_var(j, d);
        for (std::size_t m = 0; m < idx.size(); ++m) {
          double wt = loc[m];
          if (!std::isinf(schedule.c_n)) {
            const double dstat = similarity(center, prev(j, idx[m]), var0, schedule.variance_floor);
            wt *= stat_kernel(dstat / schedule.c_n, schedule.kst);
          }
          w[m] = wt;
          total += wt;
        }
        if (!(total > 0.0)) throw DomainError("mass_sweep: zero total weight at voxel " + std::to_string(d));
        double est = 0.0;
        for (std::size_t m = 0; m < idx.size(); ++m) {
          w[m] /= total;
          est += w[m] * state.raw.beta(j, idx[m]);
        }
        next.current.beta(j, d) = est;
        next.current.var_diag(j, d) =
            std::max(weighted_variance(idx, w, noise, design.omega_inv(j, j), scratch), schedule.variance_floor);
        table.set(d, idx, w);
      }
    }
  }, 64);
  return next;
}

/// Freezes (j, d) whose scale-s estimate left the raw confidence region:
/// {beta_raw - beta_s}^2 / var_raw > C_s reverts to the scale s-1 state.
/// Returns the number of newly frozen cells.
inline std::size_t stop_check(const MassState& before, MassState& after, const ScaleSchedule& schedule) {
  const int s = after.current.scale_index;
  if (s < 1) throw DomainError("stop_check: needs s >= 1");
  if (s < schedule.stop_check_from) return 0;
  const double cs = schedule.c_s[static_cast<std::size_t>(s)];
  const Eigen::Index p = after.p();
  const Rank nd = after.raw.mask.n_active();
  std::size_t newly = 0;
  for (Rank d = 0; d < nd; ++d) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (before.is_frozen(j, d)) continue;
      const double dist = similarity(after.raw.beta(j, d), after.current.beta(j, d), after.raw.var_diag(j, d),
                                     schedule.variance_floor);
      if (dist > cs) {
        after.current.beta(j, d) = before.current.beta(j, d);
        after.current.var_diag(j, d) = before.current.var_diag(j, d);
        auto& table = after.weights[static_cast<std::size_t>(j)];
        table.set(d, before.weights[static_cast<std::size_t>(j)].indices(d),
                  before.weights[static_cast<std::size_t>(j)].weights(d));
        after.frozen[after.cell(j, d)] = 1;
        after.stopped_at[after.cell(j, d)] = s;
        ++newly;
      }
    }
  }
  return newly;
}

/// Runs sweeps s = 1..S. `on_scale` sees the state after every scale, including s = 0.
inline MassState run_mass(const CoefficientField& raw, const ScaleSchedule& schedule, const NoiseModel& noise,
                          const DesignMatrix& design,
                          const std::function<void(const MassState&)>& on_scale = {}) {
  MassState state = initial_state(raw, schedule.max_step);
  if (on_scale) on_scale(state);
  for (int s = 1; s <= schedule.max_step; ++s) {
    MassState next = mass_sweep(state, schedule, noise, design);
    stop_check(state, next, schedule);
    state = std::move(next);
    if (on_scale) on_scale(state);
    if (std::all_of(state.frozen.begin(), state.frozen.end(), [](std::uint8_t f) { return f != 0; })) {
      // Everything frozen: remaining scales would copy through unchanged.
      while (state.current.scale_index < schedule.max_step) {
        ++state.current.scale_index;
        if (on_scale) on_scale(state);
      }
      break;
    }
  }
  return state;
}

}  // namespace svcm
