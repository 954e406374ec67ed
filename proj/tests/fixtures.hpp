#pragma once

#include <array>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "svcm/design.hpp"
#include "svcm/lsq.hpp"
#include "svcm/volume.hpp"

namespace fixture {

struct Problem {
  svcm::SubjectStack stack;
  svcm::DesignMatrix design;
};

/// Random design (intercept + Gaussian columns) and images with a smooth
/// shared component plus white noise.
inline Problem random_problem(std::array<int, 3> dims, int n, int p, std::uint64_t seed,
                              std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const svcm::Grid3 grid(dims, spacing);
  const svcm::Mask mask = svcm::Mask::full(grid);
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int c = 1; c < p; ++c) x(i, c) = z(rng);
  }
  Problem pr;
  pr.design = svcm::fit_design(x);
  pr.stack.mask = mask;
  pr.stack.y.resize(n, mask.n_active());
  for (int i = 0; i < n; ++i) {
    const double a = z(rng), b = z(rng);
    for (svcm::Rank d = 0; d < mask.n_active(); ++d) {
      const auto c = grid.coords(mask.voxel(d));
      pr.stack.y(i, d) = 0.3 * c.i - 0.1 * c.j + a * std::sin(0.7 * c.i) + b * std::cos(0.5 * c.j + 0.3 * c.k) + 0.5 * z(rng);
    }
  }
  return pr;
}

}  // namespace fixture
