#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "xvqa/agent.hpp"
#include "xvqa/scene.hpp"

namespace xvqa::testing {

// Mean attention over a box by integrating the piecewise-constant attention
// density pixel by pixel at the image resolution.
inline double pixel_box_mean(const AttentionMap& att, const Box& b, int width, int height) {
  double num = 0, den = 0;
  const int g = att.grid;
  const int x0 = std::max(0, static_cast<int>(b.x)), x1 = std::min(width, static_cast<int>(b.x + b.w) + 1);
  const int y0 = std::max(0, static_cast<int>(b.y)), y1 = std::min(height, static_cast<int>(b.y + b.h) + 1);
  for (int py = y0; py < y1; ++py) {
    const double cy = std::min(py + 1.0, b.y + b.h) - std::max<double>(py, b.y);
    if (cy <= 0) continue;
    const int row = py * g / height;
    for (int px = x0; px < x1; ++px) {
      const double cx = std::min(px + 1.0, b.x + b.w) - std::max<double>(px, b.x);
      if (cx <= 0) continue;
      const int col = px * g / width;
      num += att.at(row, col) * cx * cy;
      den += cx * cy;
    }
  }
  return den > 0 ? num / den : 0.0;
}

struct OracleRank {
  std::string id;
  double score;
  double area;
};

// Ranking by score descending, then smaller area, then id.
inline std::vector<OracleRank> oracle_ranking(const AttentionMap& att, const Scene& s, size_t k) {
  std::vector<OracleRank> r;
  for (const auto& o : s.objects) r.push_back({o.id, pixel_box_mean(att, o.box, s.width, s.height), o.box.area()});
  std::sort(r.begin(), r.end(), [](const OracleRank& a, const OracleRank& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.area != b.area) return a.area < b.area;
    return a.id < b.id;
  });
  if (r.size() > k) r.resize(k);
  return r;
}

}  // namespace xvqa::testing
