#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "svcm/infer.hpp"
#include "svcm/simulate.hpp"

using namespace svcm;

namespace {

struct Fit {
  fixture::Problem pr;
  CoefficientField raw;
  NoiseModel noise;
};

Fit fit_small(std::array<int, 3> dims, int n, int p, std::uint64_t seed) {
  Fit f;
  f.pr = fixture::random_problem(dims, n, p, seed);
  f.raw = ls_fit(f.pr.stack, f.pr.design);
  NoiseModelOptions opt;
  opt.gcv_grid = {1.5, 2.5};
  f.noise = fit_noise_model(f.pr.stack, f.pr.design, f.raw, opt);
  f.raw.var_diag = raw_variance(f.pr.design, f.noise.sigma_y_diag());
  return f;
}

Eigen::MatrixXd dense_weights(const MassState& st, Rank d0) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(st.p(), st.raw.beta.cols());
  for (Eigen::Index j = 0; j < st.p(); ++j) {
    const auto idx = st.weights[static_cast<std::size_t>(j)].indices(d0);
    const auto wt = st.weights[static_cast<std::size_t>(j)].weights(d0);
    for (std::size_t m = 0; m < idx.size(); ++m) w(j, idx[m]) = wt[m];
  }
  return w;
}

CoefficientField constant_field(const Mask& mask, const Eigen::VectorXd& beta, const Eigen::VectorXd& var) {
  CoefficientField f;
  f.mask = mask;
  f.beta = beta.replicate(1, mask.n_active());
  f.var_diag = var.replicate(1, mask.n_active());
  return f;
}

}  // namespace

TEST(Covariance, MatchesKroneckerOracle) {
  for (int p = 1; p <= 3; ++p) {
    Fit f = fit_small({6, 5, 2}, 10, p, 40 + static_cast<std::uint64_t>(p));
    // Per-coefficient stopping: freeze every coefficient at different voxels.
    ScheduleOptions opt;
    opt.cn_convention = QuantileConvention::Upper;
    opt.stop_check_from = 1;
    opt.max_step = 6;
    const ScaleSchedule sch = make_schedule(10, opt);
    const MassState st = run_mass(f.raw, sch, f.noise, f.pr.design);
    const Eigen::MatrixXd sy = oracle::dense_sigma_y(f.noise);
    for (Rank d0 : {Rank{0}, Rank{17}, Rank{33}, Rank{59}}) {
      bool clipped = true;
      const Eigen::MatrixXd got = mass_covariance(st, f.noise, f.pr.design, d0, &clipped);
      const Eigen::MatrixXd ref = oracle::kronecker_covariance(dense_weights(st, d0), sy, f.pr.design.omega_inv);
      EXPECT_FALSE(clipped);
      EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, ref.cwiseAbs().maxCoeff())) << p << " " << d0;
      for (Eigen::Index j = 0; j < p; ++j) EXPECT_NEAR(got(j, j), st.current.var_diag(j, d0), 1e-10 * got(j, j));
    }
  }
}

TEST(Covariance, IdentityWeightsGivePlugIn) {
  Fit f = fit_small({4, 4, 1}, 8, 2, 3);
  const MassState st = initial_state(f.raw, 0);
  const Eigen::VectorXd sy = f.noise.sigma_y_diag();
  for (Rank d : {Rank{0}, Rank{9}}) {
    const Eigen::MatrixXd got = mass_covariance(st, f.noise, f.pr.design, d);
    EXPECT_LT((got - raw_covariance(sy, f.pr.design, d)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Wald, ScalarExample) {
  const Mask mask = Mask::full(Grid3({1, 1, 1}));
  const CoefficientField f = constant_field(mask, Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0));
  const WaldMap w = wald_test(f, diagonal_covariance(f), make_hypothesis(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1)));
  EXPECT_DOUBLE_EQ(w.statistic(0), 4.0);
  EXPECT_NEAR(w.p_value(0), 0.04550026389635842, 1e-12);
}

TEST(Wald, NullHoldsExactly) {
  const Mask mask = Mask::full(Grid3({2, 1, 1}));
  const CoefficientField f = constant_field(mask, Eigen::Vector2d(0.3, -0.1), Eigen::Vector2d(1.0, 2.0));
  const WaldMap w = wald_test(f, diagonal_covariance(f), single_coefficient_hypothesis(0, 2, 0.3));
  EXPECT_EQ(w.statistic(0), 0.0);
  EXPECT_EQ(w.p_value(0), 1.0);
}

TEST(Wald, TwoDimensionalMatchesDirectAlgebra) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> z;
  const Mask mask = Mask::full(Grid3({1, 1, 1}));
  Eigen::MatrixXd a(3, 3);
  for (Eigen::Index i = 0; i < 9; ++i) a.data()[i] = z(rng);
  const Eigen::MatrixXd cov = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(3, 3);
  const Eigen::Vector3d beta(z(rng), z(rng), z(rng));
  CoefficientField f = constant_field(mask, beta, cov.diagonal());
  Eigen::MatrixXd r1(2, 3);
  r1 << 1, -1, 0, 0, 1, 2;
  const Eigen::Vector2d b0(0.1, -0.2);
  const WaldMap w = wald_test(f, [&](Rank) { return cov; }, make_hypothesis(r1, b0));
  const Eigen::Vector2d diff = r1 * beta - b0;
  const double ref = diff.dot((r1 * cov * r1.transpose()).inverse() * diff);
  EXPECT_NEAR(w.statistic(0), ref, 1e-12 * ref);
  EXPECT_NEAR(w.p_value(0), std::exp(-ref / 2.0), 1e-12);
}

TEST(Wald, InvariantToRowScaling) {
  const Mask mask = Mask::full(Grid3({1, 1, 1}));
  Eigen::Matrix2d cov;
  cov << 2.0, 0.3, 0.3, 1.0;
  const CoefficientField f = constant_field(mask, Eigen::Vector2d(0.5, 1.5), cov.diagonal());
  Eigen::MatrixXd r1(1, 2);
  r1 << 1, 1;
  const auto w1 = wald_test(f, [&](Rank) { return Eigen::MatrixXd(cov); }, make_hypothesis(r1, Eigen::VectorXd::Constant(1, 1.0)));
  const auto w2 = wald_test(f, [&](Rank) { return Eigen::MatrixXd(cov); }, make_hypothesis(-3.0 * r1, Eigen::VectorXd::Constant(1, -3.0)));
  EXPECT_NEAR(w1.statistic(0), w2.statistic(0), 1e-12);
}

TEST(Wald, SingularMiddleMatrixFlagged) {
  const Mask mask = Mask::full(Grid3({1, 1, 1}));
  const CoefficientField f = constant_field(mask, Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(0.0, 1.0));
  const WaldMap w = wald_test(f, diagonal_covariance(f), single_coefficient_hypothesis(0, 2));
  EXPECT_EQ(w.singular[0], 1);
  EXPECT_EQ(w.p_value(0), 1.0);
}

TEST(Hypothesis, RankDeficientRejected) {
  Eigen::MatrixXd r1(2, 3);
  r1 << 1, 2, 3, 2, 4, 6;
  EXPECT_THROW(make_hypothesis(r1, Eigen::Vector2d::Zero()), DomainError);
  EXPECT_THROW(make_hypothesis(Eigen::MatrixXd::Ones(1, 3), Eigen::Vector2d::Zero()), DomainError);
}

TEST(Clusters, SizeFilterAndBlob) {
  const Mask mask = Mask::full(Grid3({20, 20, 1}));
  WaldMap w;
  w.p_value = Eigen::VectorXd::Ones(mask.n_active());
  EXPECT_TRUE(detect_clusters(w, mask).empty());
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 6; ++j) w.p_value(mask.rank(mask.grid().linear(i, j, 0))) = 0.001;
  for (int k = 0; k < 8; ++k) w.p_value(mask.rank(mask.grid().linear(2 * k + 1, 15, 0))) = 0.001;
  const auto cl = detect_clusters(w, mask, 0.05, 50);
  ASSERT_EQ(cl.size(), 1u);
  EXPECT_EQ(cl[0].size(), 60u);
  EXPECT_EQ(detect_clusters(w, mask, 0.05, 1).size(), 9u);
}

TEST(Predict, InterceptAndDotProduct) {
  const Mask mask = Mask::full(Grid3({3, 1, 1}));
  CoefficientField f;
  f.mask = mask;
  f.beta.resize(2, 3);
  f.beta << 1, 2, 3, 4, 5, 6;
  f.var_diag = Eigen::MatrixXd::Ones(2, 3);
  EXPECT_EQ(predict_subject(f, Eigen::Vector2d(1, 0)), Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(predict_subject(f, Eigen::Vector2d(1, 2)), Eigen::Vector3d(9, 12, 15));
  EXPECT_THROW(predict_subject(f, Eigen::Vector3d(1, 0, 0)), DomainError);
}

TEST(Predict, LeaveOneOutNotWorseThanVoxelwiseGlm) {
  PhantomSpec spec;
  spec.dims = {32, 32, 2};
  spec.beta_geometry = default_geometry(spec.dims);
  spec.n = 21;
  spec.seed = 77;
  double mae_svcm = 0.0, mae_glm = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const Phantom ph = generate(spec, static_cast<std::uint64_t>(draw));
    const Eigen::Index out = draw % spec.n;
    Eigen::MatrixXd x(spec.n - 1, 3), y(spec.n - 1, ph.stack.y.cols());
    for (Eigen::Index i = 0, r = 0; i < spec.n; ++i) {
      if (i == out) continue;
      x.row(r) = ph.design.x.row(i);
      y.row(r++) = ph.stack.y.row(i);
    }
    const DesignMatrix design = fit_design(x);
    const SubjectStack st{ph.stack.mask, y};
    CoefficientField raw = ls_fit(st, design);
    NoiseModelOptions opt;
    opt.gcv_grid = {1.5, 2.5};
    const NoiseModel nm = fit_noise_model(st, design, raw, opt);
    raw.var_diag = raw_variance(design, nm.sigma_y_diag());
    const MassState fin = run_mass(raw, make_schedule(design.n), nm, design);
    const Eigen::VectorXd truth = ph.stack.y.row(out).transpose();
    mae_glm += (predict_subject(raw, ph.design.x.row(out).transpose()) - truth).cwiseAbs().mean();
    mae_svcm += (predict_subject(fin.current, ph.design.x.row(out).transpose()) - truth).cwiseAbs().mean();
  }
  EXPECT_LE(mae_svcm, mae_glm);
}
