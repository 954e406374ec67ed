#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "svcm/baselines.hpp"

using namespace svcm;

namespace {
NoiseModel noise_for(const fixture::Problem& pr, CoefficientField& raw) {
  NoiseModelOptions opt;
  opt.gcv_grid = {1.5, 2.5};
  NoiseModel nm = fit_noise_model(pr.stack, pr.design, raw, opt);
  raw.var_diag = raw_variance(pr.design, nm.sigma_y_diag());
  return nm;
}
}  // namespace

TEST(Lce, SmallBandwidthIsIdentity) {
  const auto pr = fixture::random_problem({5, 4, 2}, 8, 2, 1);
  CoefficientField raw = ls_fit(pr.stack, pr.design);
  const NoiseModel nm = noise_for(pr, raw);
  const LceResult r = lce_smooth(raw, 0.9, nm, pr.design);
  EXPECT_EQ(r.field.beta, raw.beta);
  EXPECT_LT((r.field.var_diag - raw.var_diag).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(lce_smooth(raw, 0.0, nm, pr.design).passthrough);
}

TEST(Lce, ConstantFieldUnchanged) {
  const auto pr = fixture::random_problem({5, 4, 2}, 8, 2, 2);
  CoefficientField raw = ls_fit(pr.stack, pr.design);
  const NoiseModel nm = noise_for(pr, raw);
  raw.beta.setConstant(0.25);
  const LceResult r = lce_smooth(raw, 2.5, nm, pr.design);
  EXPECT_LT((r.field.beta.array() - 0.25).abs().maxCoeff(), 1e-14);
}

TEST(Lce, OneDimensionalMatchesDirectAverage) {
  const auto pr = fixture::random_problem({8, 1, 1}, 6, 2, 3);
  CoefficientField raw = ls_fit(pr.stack, pr.design);
  const NoiseModel nm = noise_for(pr, raw);
  const double h = 2.5;
  const LceResult r = lce_smooth(raw, h, nm, pr.design);
  const Eigen::MatrixXd sy = oracle::dense_sigma_y(nm);
  for (Rank d = 0; d < 8; ++d) {
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(8);
    for (Rank m = 0; m < 8; ++m) {
      const double u = std::abs(static_cast<double>(m - d)) / h;
      if (u < 1.0) w(m) = 0.75 * (1.0 - u * u);
    }
    w /= w.sum();
    for (Eigen::Index j = 0; j < 2; ++j) {
      EXPECT_NEAR(r.field.beta(j, d), w.dot(raw.beta.row(j)), 1e-12);
      EXPECT_NEAR(r.field.var_diag(j, d), pr.design.omega_inv(j, j) * w * sy * w.transpose(), 1e-12);
    }
  }
}

TEST(Gks, TinySigmaIsPlainLs) {
  const auto pr = fixture::random_problem({5, 4, 2}, 8, 2, 4);
  const CoefficientField a = ls_fit(pr.stack, pr.design);
  const CoefficientField b = gks_pipeline(pr.stack, pr.design, 0.2);
  EXPECT_LT((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gks, ConstantImagesUnchanged) {
  const auto pr = fixture::random_problem({5, 4, 2}, 3, 1, 4);
  SubjectStack st{pr.stack.mask, Eigen::MatrixXd::Constant(3, 40, 1.5)};
  const SubjectStack sm = gaussian_smooth_stack(st, 1.7);
  EXPECT_LT((sm.y.array() - 1.5).abs().maxCoeff(), 1e-14);
}

TEST(Gks, MatchesDenseConvolution) {
  const auto pr = fixture::random_problem({6, 5, 3}, 4, 1, 5, {1.0, 1.3, 2.0});
  const double sigma = 0.9;
  const SubjectStack sm = gaussian_smooth_stack(pr.stack, sigma);
  const Mask& mask = pr.stack.mask;
  for (Rank d = 0; d < mask.n_active(); ++d) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(4);
    double tot = 0.0;
    for (Rank m = 0; m < mask.n_active(); ++m) {
      const double r = mask.distance(d, m);
      if (r > 3.0 * sigma) continue;
      const double k = std::exp(-r * r / (2 * sigma * sigma));
      acc += k * pr.stack.y.col(m);
      tot += k;
    }
    EXPECT_LT((sm.y.col(d) - acc / tot).cwiseAbs().maxCoeff(), 1e-10);
  }
}
