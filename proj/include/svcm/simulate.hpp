#pragma once

// Synthetic phantom generator and the Monte-Carlo harness that summarizes
// bias, empirical SD, estimated SD and rejection rates per true-value ROI.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svcm/baselines.hpp"
#include "svcm/chi2.hpp"
#include "svcm/design.hpp"
#include "svcm/fpca.hpp"
#include "svcm/lsq.hpp"
#include "svcm/mass.hpp"
#include "svcm/volume.hpp"

namespace svcm {

enum class NoiseKind { Gaussian, ChiSquare3 };
enum class RoiKind { Square, Disk, Ring, Triangle };

/// In-plane shape, identical on every axial slice. Positions are in voxel units
/// measured at voxel centers (i + 0.5, j + 0.5).
struct RoiShape {
  RoiKind kind = RoiKind::Square;
  double cx = 0.0, cy = 0.0;
  double size = 1.0;   ///< square side, disk radius, ring outer radius, triangle height
  double width = 0.0;  ///< ring width
  double value = 0.0;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    switch (kind) {
      case RoiKind::Square: return std::abs(dx) < size / 2 && std::abs(dy) < size / 2;
      case RoiKind::Disk: return dx * dx + dy * dy <= size * size;
      case RoiKind::Ring: {
        const double r2 = dx * dx + dy * dy, inner = size - width;
        return r2 <= size * size && r2 > inner * inner;
      }
      case RoiKind::Triangle: {
        const double t = dy + size / 2;  // apex at cy - size/2, base toward +y
        return t > 0 && t <= size && std::abs(dx) <= t / 2;
      }
    }
    return false;
  }
};

/// Four quadrant shapes per coefficient (square 0.2, disk 0.4, ring 0.6,
/// triangle 0.8, background 0); coefficient j is shifted by 2j voxels along x.
inline std::vector<std::vector<RoiShape>> default_geometry(std::array<int, 3> dims, int p = 3) {
  const double qx = dims[0] / 4.0, qy = dims[1] / 4.0;
  std::vector<std::vector<RoiShape>> out;
  for (int j = 0; j < p; ++j) {
    const double shift = 2.0 * j;
    out.push_back({
        {RoiKind::Square, qx + shift, qy, 12.0, 0.0, 0.2},
        {RoiKind::Disk, 3 * qx + shift, qy, 7.0, 0.0, 0.4},
        {RoiKind::Ring, qx + shift, 3 * qy, 9.0, 4.0, 0.6},
        {RoiKind::Triangle, 3 * qx + shift, 3 * qy, 14.0, 0.0, 0.8},
    });
  }
  return out;
}

struct PhantomSpec {
  std::array<int, 3> dims{64, 64, 8};
  int n = 60;
  NoiseKind noise = NoiseKind::Gaussian;
  double noise_scale = 1.0;
  std::array<double, 3> score_vars{0.6, 0.3, 0.1};
  /// Center and scale x2, x3 to unit variance (the intercept stays 1).
  bool standardize_covariates = true;
  std::vector<std::vector<RoiShape>> beta_geometry = default_geometry({64, 64, 8});
  std::uint64_t seed = 12345;
};

struct Phantom {
  SubjectStack stack;
  DesignMatrix design;
  CoefficientField truth;           ///< zero variance
  Eigen::MatrixXd eigenfunctions;   ///< 3 x N_D, the generating psi_l
  Eigen::MatrixXd scores;           ///< n x 3, the generating xi_il
};

/// Generating eigenfunctions at 1-based voxel coordinates d = (i+1, j+1, k+1).
inline Eigen::MatrixXd phantom_eigenfunctions(const Mask& mask) {
  Eigen::MatrixXd psi(3, mask.n_active());
  const Grid3& g = mask.grid();
  const double period_x = g.dims()[0], period_y = g.dims()[1];
  for (Rank r = 0; r < mask.n_active(); ++r) {
    const Index3 c = g.coords(mask.voxel(r));
    psi(0, r) = 0.5 * std::sin(2.0 * std::numbers::pi * (c.i + 1) / period_x);
    psi(1, r) = 0.5 * std::cos(2.0 * std::numbers::pi * (c.j + 1) / period_y);
    psi(2, r) = std::sqrt(1.0 / 2.625) * (9.0 / 8.0 - (c.k + 1) / 4.0);
  }
  return psi;
}

inline Eigen::MatrixXd phantom_beta(const Mask& mask, const std::vector<std::vector<RoiShape>>& geometry) {
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(geometry.size()), mask.n_active());
  const Grid3& g = mask.grid();
  for (Rank r = 0; r < mask.n_active(); ++r) {
    const Index3 c = g.coords(mask.voxel(r));
    for (std::size_t j = 0; j < geometry.size(); ++j)
      for (const RoiShape& shape : geometry[j])
        if (shape.contains(c.i + 0.5, c.j + 0.5)) beta(static_cast<Eigen::Index>(j), r) = shape.value;
  }
  return beta;
}

namespace detail {
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t kind,
                              std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}
}  // namespace detail

/// y_i(d) = x_i^T beta(d) + sum_l xi_il psi_l(d) + eps_i(d). Each (replicate,
/// subject) pair draws from its own stream, so output is independent of threading.
inline Phantom generate(const PhantomSpec& spec, std::uint64_t replicate = 0) {
  if (spec.n < 4) throw DomainError("generate: need at least 4 subjects");
  const Grid3 grid(spec.dims);
  const Mask mask = Mask::full(grid);
  const Rank nd = mask.n_active();
  const Eigen::Index p = static_cast<Eigen::Index>(spec.beta_geometry.size());
  if (p != 3) throw DomainError("generate: the phantom uses three covariates (intercept, group, age)");

  Eigen::MatrixXd x(spec.n, 3);
  {
    auto rng = detail::stream(spec.seed, replicate, 0, 0);
    std::bernoulli_distribution group(0.5);
    std::uniform_real_distribution<double> age(1.0, 2.0);
    for (int i = 0; i < spec.n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = group(rng) ? 1.0 : 0.0;
      x(i, 2) = age(rng);
    }
    if (spec.standardize_covariates) {
      for (int c = 1; c < 3; ++c) {
        const double mean = x.col(c).mean();
        x.col(c).array() -= mean;
        const double sd = std::sqrt(x.col(c).squaredNorm() / spec.n);
        if (sd > 0.0) x.col(c) /= sd;
      }
    }
  }

  Phantom ph;
  ph.design = fit_design(x);
  ph.truth.mask = mask;
  ph.truth.beta = phantom_beta(mask, spec.beta_geometry);
  ph.truth.var_diag = Eigen::MatrixXd::Zero(p, nd);
  ph.eigenfunctions = phantom_eigenfunctions(mask);
  ph.scores.resize(spec.n, 3);
  ph.stack.mask = mask;
  ph.stack.y.resize(spec.n, nd);

  const Eigen::MatrixXd mean_part = x * ph.truth.beta;  // n x N_D
  parallel_for(static_cast<std::size_t>(spec.n), [&](std::size_t b, std::size_t e) {
    for (std::size_t iu = b; iu < e; ++iu) {
      const auto i = static_cast<Eigen::Index>(iu);
      auto rng = detail::stream(spec.seed, replicate, 1, iu);
      std::normal_distribution<double> z(0.0, 1.0);
      for (int l = 0; l < 3; ++l) ph.scores(i, l) = std::sqrt(spec.score_vars[static_cast<std::size_t>(l)]) * z(rng);
      for (Rank d = 0; d < nd; ++d) {
        double eps;
        if (spec.noise == NoiseKind::Gaussian) {
          eps = z(rng);
        } else {
          const double a = z(rng), bb = z(rng), c = z(rng);
          eps = a * a + bb * bb + c * c - 3.0;
        }
        ph.stack.y(i, d) = mean_part(i, d) + ph.scores.row(i).dot(ph.eigenfunctions.col(d)) + spec.noise_scale * eps;
      }
    }
  }, 1);
  return ph;
}

/// Distance from each voxel to the nearest active voxel whose value differs,
/// searched up to max_radius (larger distances are reported as +inf).
inline Eigen::VectorXd boundary_distance(const Mask& mask, const Eigen::RowVectorXd& values, double max_radius) {
  const Stencil stencil = make_ball_stencil(mask.grid(), max_radius, /*closed=*/true);
  Eigen::VectorXd out(mask.n_active());
  for (Rank d = 0; d < mask.n_active(); ++d) {
    double best = std::numeric_limits<double>::infinity();
    for_each_in_stencil(mask, d, stencil, [&](Rank r, const StencilEntry& se) {
      if (values(r) != values(d)) best = std::min(best, se.dist);
    });
    out(d) = best;
  }
  return out;
}

/// Running per-voxel sums for one estimator across replicates.
class EstimatorAccumulator {
 public:
  EstimatorAccumulator() = default;
  EstimatorAccumulator(Eigen::Index p, Rank nd)
      : mean_(Eigen::MatrixXd::Zero(p, nd)),
        m2_(Eigen::MatrixXd::Zero(p, nd)),
        sum_sd_(Eigen::MatrixXd::Zero(p, nd)),
        rejections_(Eigen::MatrixXd::Zero(p, nd)) {}

  /// Adds one replicate; `reject` marks p < alpha for H0: beta_j(d) = 0.
  void add(const CoefficientField& field, double alpha) {
    // Welford update; the sum-of-squares form cancels badly for tiny spreads.
    ++reps_;
    const Eigen::MatrixXd delta = field.beta - mean_;
    mean_ += delta / reps_;
    m2_ += delta.cwiseProduct(field.beta - mean_);
    sum_sd_ += field.var_diag.cwiseSqrt();
    Eigen::MatrixXd rej(field.beta.rows(), field.beta.cols());
    for (Eigen::Index d = 0; d < field.beta.cols(); ++d)
      for (Eigen::Index j = 0; j < field.beta.rows(); ++j) {
        const double w = field.beta(j, d) * field.beta(j, d) / field.var_diag(j, d);
        rej(j, d) = chi2_survival(w, 1.0) < alpha ? 1.0 : 0.0;
      }
    rejections_ += rej;
    per_rep_rejections_.push_back(std::move(rej));
  }

  int reps() const { return reps_; }
  Eigen::MatrixXd mean() const { return mean_; }
  /// Empirical standard deviation across replicates (divisor reps - 1).
  Eigen::MatrixXd empirical_sd() const {
    return (m2_ / std::max(1, reps_ - 1)).cwiseMax(0.0).cwiseSqrt();
  }
  Eigen::MatrixXd mean_estimated_sd() const { return sum_sd_ / reps_; }
  Eigen::MatrixXd rejection_rate() const { return rejections_ / reps_; }
  const std::vector<Eigen::MatrixXd>& per_rep_rejections() const { return per_rep_rejections_; }

 private:
  Eigen::MatrixXd mean_, m2_, sum_sd_, rejections_;
  std::vector<Eigen::MatrixXd> per_rep_rejections_;
  int reps_ = 0;
};

struct LevelMetrics {
  Eigen::Index coefficient = 0;
  double level = 0.0;
  std::size_t voxels = 0;
  double bias = 0.0;
  double rms = 0.0;  ///< empirical SD across replicates, ROI average
  double sd = 0.0;   ///< mean estimated SD, ROI average
  double re = 0.0;   ///< rms / sd
  double es = 0.0;   ///< rejection rate at alpha
  double se = 0.0;   ///< across-replicate SD of the ROI rejection rate
};

using RoiMetrics = std::vector<LevelMetrics>;

inline RoiMetrics summarize(const EstimatorAccumulator& acc, const CoefficientField& truth) {
  RoiMetrics out;
  const Eigen::MatrixXd mean = acc.mean(), esd = acc.empirical_sd(), msd = acc.mean_estimated_sd(),
                        rate = acc.rejection_rate();
  for (Eigen::Index j = 0; j < truth.beta.rows(); ++j) {
    std::set<double> levels(truth.beta.row(j).data(), truth.beta.row(j).data() + truth.beta.cols());
    for (double level : levels) {
      LevelMetrics m;
      m.coefficient = j;
      m.level = level;
      std::vector<Rank> members;
      for (Rank d = 0; d < truth.beta.cols(); ++d)
        if (truth.beta(j, d) == level) members.push_back(d);
      m.voxels = members.size();
      for (Rank d : members) {
        m.bias += mean(j, d) - level;
        m.rms += esd(j, d);
        m.sd += msd(j, d);
        m.es += rate(j, d);
      }
      const double k = static_cast<double>(members.size());
      m.bias /= k;
      m.rms /= k;
      m.sd /= k;
      m.es /= k;
      m.re = m.sd > 0.0 ? m.rms / m.sd : std::numeric_limits<double>::quiet_NaN();
      std::vector<double> rep_rates;
      for (const auto& rej : acc.per_rep_rejections()) {
        double r = 0.0;
        for (Rank d : members) r += rej(j, d);
        rep_rates.push_back(r / k);
      }
      if (rep_rates.size() > 1) {
        double mu = 0.0;
        for (double r : rep_rates) mu += r;
        mu /= static_cast<double>(rep_rates.size());
        double ss = 0.0;
        for (double r : rep_rates) ss += (r - mu) * (r - mu);
        m.se = std::sqrt(ss / static_cast<double>(rep_rates.size() - 1));
      }
      out.push_back(m);
    }
  }
  return out;
}

inline const LevelMetrics& find_level(const RoiMetrics& metrics, Eigen::Index j, double level) {
  for (const auto& m : metrics)
    if (m.coefficient == j && std::abs(m.level - level) < 1e-12) return m;
  throw DomainError("no ROI with level " + std::to_string(level) + " for coefficient " + std::to_string(j));
}

struct MonteCarloOptions {
  ScheduleOptions schedule;
  NoiseModelOptions noise;
  std::vector<int> scales{0, 5, 10};  ///< MASS scales to record
  std::vector<double> lce_bandwidths;
  std::vector<double> gks_sigmas;
  double alpha = 0.05;
};

/// Everything a replicate produced, for callers that collect extra statistics.
struct ReplicateOutput {
  const Phantom& phantom;
  const CoefficientField& raw;
  const NoiseModel& noise;
  const std::map<std::string, CoefficientField>& estimates;
};

struct MonteCarloResult {
  CoefficientField truth;
  Eigen::MatrixXd true_eigenfunctions;
  std::map<std::string, EstimatorAccumulator> estimators;
  int reps = 0;

  RoiMetrics metrics(const std::string& label) const { return summarize(estimators.at(label), truth); }
};

inline std::string scale_label(int s) { return "h" + std::to_string(s); }
inline std::string bandwidth_label(const std::string& method, double h) {
  std::string v = std::to_string(h);
  while (v.size() > 1 && v.back() == '0') v.pop_back();
  if (!v.empty() && v.back() == '.') v.pop_back();
  return method + "_" + v;
}

inline MonteCarloResult run_monte_carlo(const PhantomSpec& spec, int reps, const MonteCarloOptions& opt,
                                        const std::function<void(int, const ReplicateOutput&)>& on_replicate = {}) {
  if (reps < 1) throw DomainError("run_monte_carlo: reps must be >= 1");
  MonteCarloResult result;
  result.reps = reps;
  for (int rep = 0; rep < reps; ++rep) {
    const Phantom ph = generate(spec, static_cast<std::uint64_t>(rep));
    CoefficientField raw = ls_fit(ph.stack, ph.design);
    const NoiseModel noise = fit_noise_model(ph.stack, ph.design, raw, opt.noise);
    raw.var_diag = raw_variance(ph.design, noise.sigma_y_diag(), opt.schedule.variance_floor);

    std::map<std::string, CoefficientField> estimates;
    if (!opt.scales.empty()) {
      const ScaleSchedule schedule = make_schedule(ph.design.n, opt.schedule);
      const std::set<int> wanted(opt.scales.begin(), opt.scales.end());
      run_mass(raw, schedule, noise, ph.design, [&](const MassState& st) {
        if (wanted.count(st.current.scale_index)) estimates.emplace(scale_label(st.current.scale_index), st.current);
      });
    }
    for (double h : opt.lce_bandwidths)
      estimates.emplace(bandwidth_label("lce", h), lce_smooth(raw, h, noise, ph.design).field);
    for (double sigma : opt.gks_sigmas)
      estimates.emplace(bandwidth_label("gks", sigma), gks_pipeline(ph.stack, ph.design, sigma));

    if (rep == 0) {
      result.truth = ph.truth;
      result.true_eigenfunctions = ph.eigenfunctions;
    }
    for (const auto& [label, field] : estimates) {
      auto it = result.estimators.find(label);
      if (it == result.estimators.end())
        it = result.estimators.emplace(label, EstimatorAccumulator(field.beta.rows(), field.beta.cols())).first;
      it->second.add(field, opt.alpha);
    }
    if (on_replicate) on_replicate(rep, ReplicateOutput{ph, raw, noise, estimates});
  }
  return result;
}

/// Bias / RMS / SD / RE per ROI for each recorded estimator.
inline std::map<std::string, RoiMetrics> run_table1(const PhantomSpec& spec, int reps, Method method,
                                                    const MonteCarloOptions& opt) {
  if (reps < 2) throw DomainError("run_table1: reps must be >= 2");
  MonteCarloOptions o = opt;
  if (method != Method::Svcm) o.scales.clear();
  if (method != Method::Lce) o.lce_bandwidths.clear();
  if (method != Method::Gks) o.gks_sigmas.clear();
  const MonteCarloResult mc = run_monte_carlo(spec, reps, o);
  std::map<std::string, RoiMetrics> out;
  for (const auto& [label, acc] : mc.estimators) out.emplace(label, summarize(acc, mc.truth));
  return out;
}

/// Rejection rates of H0: beta_j(d) = 0; the same summary carries ES and SE.
inline std::map<std::string, RoiMetrics> run_table2(const PhantomSpec& spec, int reps, const MonteCarloOptions& opt) {
  return run_table1(spec, reps, Method::Svcm, opt);
}

}  // namespace svcm
