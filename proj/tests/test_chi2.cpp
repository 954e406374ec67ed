#include <gtest/gtest.h>

#include "oracles.hpp"
#include "svcm/chi2.hpp"

using namespace svcm;

TEST(Chi2, KnownQuantiles) {
  EXPECT_NEAR(chi2_upper_quantile(1, 0.05), 3.841458820694124, 1e-10);
  EXPECT_NEAR(chi2_upper_quantile(1, 0.5), 0.454936423119572, 1e-10);
  EXPECT_NEAR(chi2_lower_quantile(1, 0.05), 0.003932140000019522, 1e-12);
  EXPECT_NEAR(chi2_upper_quantile(1, 0.8), 0.06418475466730, 1e-10);
}

TEST(Chi2, AgreesWithBisection) {
  for (int df : {1, 2})
    for (double a : {0.8, 0.4, 0.2, 0.1, 0.05, 0.01, 1e-4})
      EXPECT_NEAR(chi2_upper_quantile(df, a), oracle::chi2_upper_quantile_bisect(df, a), 1e-10) << df << " " << a;
}

TEST(Chi2, SurvivalInvertsQuantile) {
  for (double df : {1.0, 3.0, 7.0})
    for (double a : {0.5, 0.05, 1e-6}) EXPECT_NEAR(chi2_survival(chi2_upper_quantile(df, a), df), a, 1e-12 + 1e-9 * a);
}

TEST(Chi2, SurvivalEdges) {
  EXPECT_EQ(chi2_survival(0.0, 1), 1.0);
  EXPECT_EQ(chi2_survival(-1.0, 1), 1.0);
  EXPECT_EQ(chi2_survival(INFINITY, 1), 0.0);
  EXPECT_THROW(chi2_survival(1.0, 0.0), DomainError);
  EXPECT_THROW(chi2_upper_quantile(1, 0.0), DomainError);
  EXPECT_THROW(chi2_upper_quantile(1, 1.5), DomainError);
}

TEST(Chi2, MonotoneInStatistic) {
  double prev = 1.0;
  for (double x = 0.1; x < 40; x += 0.7) {
    const double p = chi2_survival(x, 2);
    EXPECT_LT(p, prev);
    prev = p;
  }
}
