#pragma once

// Definition-level Pareto oracles: O(n^2) pairwise dominance, written
// without reference to the library's dominance routine.

#include <vector>

#include <fmt/format.h>

#include "dpp/pareto.hpp"
#include "dpp/rng.hpp"

namespace dpp::testing {

inline bool oracle_dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  bool better = false;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    const bool maximize = (*a.schema)[i].direction == Direction::maximize;
    const double x = a.values[i];
    const double y = b.values[i];
    const bool worse = maximize ? x < y : x > y;
    if (worse) return false;
    if (x != y) better = true;
  }
  return better;
}

inline std::vector<std::size_t> brute_force_front(const std::vector<ObjectiveVector>& pts,
                                                  const std::vector<bool>& removed = {}) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!removed.empty() && removed[i]) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (!removed.empty() && removed[j]) continue;
      dominated = oracle_dominates(pts[j], pts[i]);
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> brute_force_sort(const std::vector<ObjectiveVector>& pts) {
  std::vector<std::vector<std::size_t>> fronts;
  std::vector<bool> removed(pts.size(), false);
  std::size_t left = pts.size();
  while (left > 0) {
    auto f = brute_force_front(pts, removed);
    for (auto i : f) removed[i] = true;
    left -= f.size();
    fronts.push_back(std::move(f));
  }
  return fronts;
}

// Random instance: 2..max_objectives objectives with mixed directions, up to
// max_points points. Values are drawn from a coarse grid so ties and exact
// duplicates occur.
inline std::vector<ObjectiveVector> random_points(Rng& rng, int max_objectives, std::size_t max_points,
                                                  bool fixed_size) {
  const int m = fixed_size ? max_objectives : 2 + static_cast<int>(rng.below(max_objectives - 1));
  ObjectiveSchema schema;
  for (int i = 0; i < m; ++i) {
    schema.push_back({fmt::format("o{}", i), rng.below(2) ? Direction::maximize : Direction::minimize});
  }
  auto s = make_schema(schema);
  const std::size_t n = fixed_size ? max_points : 1 + rng.below(max_points);
  std::vector<ObjectiveVector> pts;
  for (std::size_t p = 0; p < n; ++p) {
    ObjectiveVector v{s, Eigen::VectorXd(m)};
    for (int i = 0; i < m; ++i) v.values[i] = static_cast<double>(rng.below(12)) / 4.0;
    pts.push_back(v);
  }
  return pts;
}

}  // namespace dpp::testing
