#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "geoflow/density.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

struct GridOracleResult {
  std::vector<Vec> path;  // polyline from x0 to x1 on grid nodes
  double action = 0.0;
};

/// Brute-force shortest path under the 1/p metric: Dijkstra on an
/// 8-connected (resolution+1)^2 grid with edge weight equal to the
/// Euclidean edge length times the average of 1/p at its endpoints.
/// Independent of the variational solver; d = 2 only.
inline GridOracleResult grid_geodesic_oracle(const GaussianMixture& m, std::span<const double> x0,
                                             std::span<const double> x1,
                                             std::span<const double> lo, std::span<const double> hi,
                                             int resolution) {
  if (m.dim() != 2 || x0.size() != 2 || x1.size() != 2 || lo.size() != 2 || hi.size() != 2)
    throw std::invalid_argument("grid_geodesic_oracle: 2D only");
  if (resolution < 2) throw std::invalid_argument("grid_geodesic_oracle: resolution too small");
  for (int j = 0; j < 2; ++j) {
    if (!(lo[j] < hi[j])) throw std::invalid_argument("grid_geodesic_oracle: empty bounds");
    if (x0[j] < lo[j] || x0[j] > hi[j] || x1[j] < lo[j] || x1[j] > hi[j])
      throw std::invalid_argument("grid_geodesic_oracle: endpoint outside bounds");
  }
  const int n = resolution + 1;
  const double hx = (hi[0] - lo[0]) / resolution;
  const double hy = (hi[1] - lo[1]) / resolution;
  auto coord = [&](int idx) {
    return Vec{lo[0] + hx * (idx % n), lo[1] + hy * (idx / n)};
  };
  auto snap = [&](std::span<const double> x) {
    const int ix = static_cast<int>(std::lround((x[0] - lo[0]) / hx));
    const int iy = static_cast<int>(std::lround((x[1] - lo[1]) / hy));
    return std::clamp(iy, 0, n - 1) * n + std::clamp(ix, 0, n - 1);
  };

  std::vector<double> inv_p(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n * n; ++i) inv_p[static_cast<std::size_t>(i)] = std::exp(-log_density(m, coord(i)));

  const int src = snap(x0);
  const int dst = snap(x1);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(n) * n, kInf);
  std::vector<int> prev(static_cast<std::size_t>(n) * n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[static_cast<std::size_t>(src)] = 0.0;
  pq.emplace(0.0, src);
  const int dxs[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  const int dys[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    if (u == dst) break;
    const int ux = u % n, uy = u / n;
    for (int k = 0; k < 8; ++k) {
      const int vx = ux + dxs[k], vy = uy + dys[k];
      if (vx < 0 || vx >= n || vy < 0 || vy >= n) continue;
      const int v = vy * n + vx;
      const double len = std::sqrt((dxs[k] * hx) * (dxs[k] * hx) + (dys[k] * hy) * (dys[k] * hy));
      const double w = len * 0.5 * (inv_p[static_cast<std::size_t>(u)] + inv_p[static_cast<std::size_t>(v)]);
      if (dist[static_cast<std::size_t>(u)] + w < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + w;
        prev[static_cast<std::size_t>(v)] = u;
        pq.emplace(dist[static_cast<std::size_t>(v)], v);
      }
    }
  }
  if (dist[static_cast<std::size_t>(dst)] == kInf)
    throw std::runtime_error("grid_geodesic_oracle: destination unreachable");

  GridOracleResult result;
  result.action = dist[static_cast<std::size_t>(dst)];
  for (int u = dst; u != -1; u = prev[static_cast<std::size_t>(u)]) result.path.push_back(coord(u));
  std::reverse(result.path.begin(), result.path.end());
  return result;
}

}  // namespace geoflow
