#include "dpp/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace dpp {
namespace {

void check_same_schema(const ObjectiveVector& a, const ObjectiveVector& b) {
  if (!a.schema || !b.schema) throw SchemaError("objective vector without schema");
  if (a.schema != b.schema && *a.schema != *b.schema) throw SchemaError("objective schemas differ");
  if (a.values.size() != static_cast<Eigen::Index>(a.schema->size()) ||
      b.values.size() != static_cast<Eigen::Index>(b.schema->size())) {
    throw SchemaError("objective vector length does not match its schema");
  }
}

void check_points(std::span<const ObjectiveVector> points) {
  for (const ObjectiveVector& p : points) {
    check_same_schema(points.front(), p);
    if (!p.values.allFinite()) throw SchemaError("objective values must be finite");
  }
}

// Values oriented so that larger is better.
double oriented(const ObjectiveVector& v, Eigen::Index i) {
  return (*v.schema)[i].direction == Direction::maximize ? v.values[i] : -v.values[i];
}

}  // namespace

std::shared_ptr<const ObjectiveSchema> make_schema(ObjectiveSchema schema) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    for (std::size_t j = i + 1; j < schema.size(); ++j) {
      if (schema[i].name == schema[j].name) throw SchemaError(fmt::format("duplicate objective '{}'", schema[i].name));
    }
  }
  return std::make_shared<const ObjectiveSchema>(std::move(schema));
}

std::ptrdiff_t find_objective(const ObjectiveSchema& schema, std::string_view name) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

double ObjectiveVector::value(std::string_view name) const {
  const auto i = find_objective(*schema, name);
  if (i < 0) throw SchemaError(fmt::format("unknown objective '{}'", name));
  return values[i];
}

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  check_same_schema(a, b);
  bool strictly = false;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    const double x = oriented(a, i);
    const double y = oriented(b, i);
    if (x < y) return false;
    if (x > y) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<std::size_t>> nondominated_sort(std::span<const ObjectiveVector> points) {
  std::vector<std::vector<std::size_t>> fronts;
  if (points.empty()) return fronts;
  check_points(points);
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> dominators(n, 0);
  std::vector<std::size_t> current;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      if (dominates(points[p], points[q])) {
        dominated[p].push_back(q);
        ++dominators[q];
      } else if (dominates(points[q], points[p])) {
        dominated[q].push_back(p);
        ++dominators[p];
      }
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (dominators[p] == 0) current.push_back(p);
  }
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t p : current) {
      for (std::size_t q : dominated[p]) {
        if (--dominators[q] == 0) next.push_back(q);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
  }
  return fronts;
}

std::vector<std::size_t> pareto_front(std::span<const ObjectiveVector> points) {
  if (points.empty()) throw std::invalid_argument("pareto_front: no points");
  return nondominated_sort(points).front();
}

std::vector<double> crowding_distance(std::span<const ObjectiveVector> points, std::span<const std::size_t> front) {
  const std::size_t n = front.size();
  std::vector<double> distance(n, 0.0);
  if (n == 0) return distance;
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::Index m = points[front[0]].values.size();
  std::vector<std::size_t> order(n);
  for (Eigen::Index obj = 0; obj < m; ++obj) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return points[front[a]].values[obj] < points[front[b]].values[obj];
    });
    const double lo = points[front[order.front()]].values[obj];
    const double hi = points[front[order.back()]].values[obj];
    distance[order.front()] = inf;
    distance[order.back()] = inf;
    if (hi <= lo) continue;
    for (std::size_t r = 1; r + 1 < n; ++r) {
      const double gap = points[front[order[r + 1]]].values[obj] - points[front[order[r - 1]]].values[obj];
      distance[order[r]] += gap / (hi - lo);
    }
  }
  return distance;
}

std::vector<std::size_t> filter_hard(std::span<const ObjectiveVector> points, const HardConstraintSet& constraints) {
  std::vector<std::size_t> kept;
  if (points.empty()) return kept;
  std::vector<std::ptrdiff_t> column;
  for (const HardConstraint& c : constraints) {
    const auto i = find_objective(*points.front().schema, c.name);
    if (i < 0) throw SchemaError(fmt::format("hard constraint on unknown objective '{}'", c.name));
    column.push_back(i);
  }
  for (std::size_t p = 0; p < points.size(); ++p) {
    bool ok = true;
    for (std::size_t c = 0; c < constraints.size() && ok; ++c) ok = constraints[c].satisfied_by(points[p].values[column[c]]);
    if (ok) kept.push_back(p);
  }
  return kept;
}

std::vector<std::string> violated_constraints(std::span<const ObjectiveVector> points,
                                              const HardConstraintSet& constraints) {
  std::vector<std::string> names;
  for (const HardConstraint& c : constraints) {
    const bool any = std::any_of(points.begin(), points.end(),
                                 [&](const ObjectiveVector& p) { return !c.satisfied_by(p.value(c.name)); });
    if (any) names.push_back(c.name);
  }
  return names;
}

SelectionMode parse_selection_mode(std::string_view text) {
  if (text == "dpp") return SelectionMode::dpp;
  if (text == "pnas") return SelectionMode::pnas;
  throw std::invalid_argument(fmt::format("unknown selection mode '{}' (expected dpp or pnas)", text));
}

std::string_view to_string(SelectionMode mode) { return mode == SelectionMode::dpp ? "dpp" : "pnas"; }

std::vector<std::size_t> select_k(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                                  std::size_t k, const HardConstraintSet& constraints, const SelectOptions& options) {
  if (k < 1) throw std::invalid_argument("select_k: K must be >= 1");
  if (keys.size() != points.size()) throw std::invalid_argument("select_k: one key per point required");
  const std::vector<std::size_t> feasible = filter_hard(points, constraints);
  std::vector<std::size_t> chosen;
  if (feasible.empty()) return chosen;

  // Work in canonical-key order so the result is independent of input order.
  std::vector<std::size_t> ordered = feasible;
  std::sort(ordered.begin(), ordered.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  if (options.mode == SelectionMode::pnas) {
    const auto col = find_objective(*points.front().schema, options.ranking_objective);
    if (col < 0) throw SchemaError(fmt::format("unknown ranking objective '{}'", options.ranking_objective));
    std::stable_sort(ordered.begin(), ordered.end(), [&](std::size_t a, std::size_t b) {
      return oriented(points[a], col) > oriented(points[b], col);
    });
    ordered.resize(std::min(k, ordered.size()));
    return ordered;
  }

  std::vector<ObjectiveVector> subset;
  subset.reserve(ordered.size());
  for (std::size_t i : ordered) subset.push_back(points[i]);
  for (const auto& front : nondominated_sort(subset)) {
    if (chosen.size() + front.size() <= k) {
      for (std::size_t i : front) chosen.push_back(ordered[i]);
      if (chosen.size() == k) break;
      continue;
    }
    const std::vector<double> crowd = crowding_distance(subset, front);
    std::vector<std::size_t> rank(front.size());
    std::iota(rank.begin(), rank.end(), 0);
    // front indices ascend with the canonical key, so a stable sort breaks ties by key.
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return crowd[a] > crowd[b]; });
    for (std::size_t r = 0; chosen.size() < k; ++r) chosen.push_back(ordered[front[rank[r]]]);
    break;
  }
  return chosen;
}

}  // namespace dpp
