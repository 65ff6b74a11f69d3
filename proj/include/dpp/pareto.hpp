#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace dpp {

enum class Direction { minimize, maximize };

struct Objective {
  std::string name;
  Direction direction = Direction::minimize;
  friend bool operator==(const Objective&, const Objective&) = default;
};

using ObjectiveSchema = std::vector<Objective>;

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Objective values of one candidate. Every vector taking part in one
// selection shares a schema.
struct ObjectiveVector {
  std::shared_ptr<const ObjectiveSchema> schema;
  Eigen::VectorXd values;

  double value(std::string_view name) const;
};

std::shared_ptr<const ObjectiveSchema> make_schema(ObjectiveSchema schema);
std::ptrdiff_t find_objective(const ObjectiveSchema& schema, std::string_view name);

// a is at least as good as b on every objective and strictly better on one.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

// Indices of the non-dominated points, ascending. Duplicates of a front
// member are all kept.
std::vector<std::size_t> pareto_front(std::span<const ObjectiveVector> points);

// Successive fronts F1, F2, ... partitioning the input (Deb's fast sort).
std::vector<std::vector<std::size_t>> nondominated_sort(std::span<const ObjectiveVector> points);

// Crowding distance of each member of `front` (same order). Boundary points
// get +inf; objectives with zero range contribute nothing.
std::vector<double> crowding_distance(std::span<const ObjectiveVector> points, std::span<const std::size_t> front);

enum class Bound { at_most, at_least };

struct HardConstraint {
  std::string name;
  double bound = 0.0;
  Bound kind = Bound::at_most;
  bool satisfied_by(double v) const { return kind == Bound::at_most ? v <= bound : v >= bound; }
};

using HardConstraintSet = std::vector<HardConstraint>;

// Indices of the points meeting every constraint; may be empty.
std::vector<std::size_t> filter_hard(std::span<const ObjectiveVector> points, const HardConstraintSet& constraints);

// Constraints violated by at least one point.
std::vector<std::string> violated_constraints(std::span<const ObjectiveVector> points,
                                              const HardConstraintSet& constraints);

enum class SelectionMode { dpp, pnas };

SelectionMode parse_selection_mode(std::string_view text);
std::string_view to_string(SelectionMode mode);

struct SelectOptions {
  SelectionMode mode = SelectionMode::dpp;
  // pnas ranks by this objective alone, best first.
  std::string ranking_objective = "error";
};

// Picks min(k, |feasible|) points. `keys` are the canonical strings used for
// every tie-break. The result is ordered by selection priority.
std::vector<std::size_t> select_k(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                                  std::size_t k, const HardConstraintSet& constraints,
                                  const SelectOptions& options = {});

}  // namespace dpp
