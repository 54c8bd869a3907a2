#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace xvqa {

using Table2x2 = std::array<std::array<int64_t, 2>, 2>;

struct ChiSquared {
  double statistic = 0;
  double p_value = 1;
};

// Pearson chi-squared test of independence, 1 degree of freedom, no
// continuity correction. Throws UndefinedTest when a row or column sums to 0.
ChiSquared chi_squared_2x2(const Table2x2& table);

// Survival function of chi-squared with 1 dof: erfc(sqrt(x / 2)).
double chi2_sf_1dof(double x);

// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> x);

// Both return nullopt when either series is constant. Throw InvariantError
// when the sizes differ or fewer than 2 pairs are given.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace xvqa
