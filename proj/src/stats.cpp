#include "xvqa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "xvqa/error.hpp"

namespace xvqa {

double chi2_sf_1dof(double x) { return x <= 0 ? 1.0 : std::erfc(std::sqrt(x / 2.0)); }

ChiSquared chi_squared_2x2(const Table2x2& t) {
  for (const auto& row : t)
    for (auto v : row)
      if (v < 0) fail(ErrorCode::RangeError, "contingency counts must be non-negative");
  const double r0 = static_cast<double>(t[0][0] + t[0][1]);
  const double r1 = static_cast<double>(t[1][0] + t[1][1]);
  const double c0 = static_cast<double>(t[0][0] + t[1][0]);
  const double c1 = static_cast<double>(t[0][1] + t[1][1]);
  if (r0 == 0 || r1 == 0 || c0 == 0 || c1 == 0)
    fail(ErrorCode::UndefinedTest, "chi-squared test undefined: a row or column total is zero");
  const double n = r0 + r1;
  const double rows[2] = {r0, r1};
  const double cols[2] = {c0, c1};
  double x = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = rows[i] * cols[j] / n;
      const double d = static_cast<double>(t[static_cast<size_t>(i)][static_cast<size_t>(j)]) - e;
      x += d * d / e;
    }
  }
  return {x, chi2_sf_1dof(x)};
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

void check_pairs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail(ErrorCode::InvariantError, "series lengths differ (" + std::to_string(x.size()) + " vs " +
                                        std::to_string(y.size()) + ")");
  if (x.size() < 2) fail(ErrorCode::InvariantError, "correlation needs at least 2 pairs");
}

}  // namespace

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  check_pairs(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  check_pairs(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace xvqa
