#include "dpp/searchengine.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "dpp/csv.hpp"

namespace dpp {

InfeasibleError::InfeasibleError(int depth, std::vector<std::string> violated)
    : std::runtime_error(fmt::format("no depth-{} candidate satisfies the hard constraints; binding: {}", depth,
                                     fmt::join(violated, ", "))),
      depth_(depth),
      violated_(std::move(violated)) {}

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorConfig& config) {
  if (config.id == "oracle") return std::make_unique<OracleEvaluator>(true);
  if (config.id == "oracle-noiseless") return std::make_unique<OracleEvaluator>(false);
  if (config.id == "trainer") return std::make_unique<TrainerEvaluator>(config.train);
  throw ConfigError(fmt::format("unknown evaluator '{}' (expected oracle, oracle-noiseless or trainer)", config.id));
}

std::string latency_objective(std::string_view device) { return fmt::format("{}{}", kLatencyPrefix, device); }

namespace {

std::vector<std::string> latency_devices(const SearchConfig& config) {
  std::vector<std::string> names;
  for (const auto& d : config.devices) names.push_back(d.name);
  if (config.measure_latency) names.emplace_back(kHostDevice);
  return names;
}

bool is_latency(std::string_view name) { return name.starts_with(kLatencyPrefix); }

}  // namespace

ObjectiveSchema objective_schema(const SearchConfig& config) {
  ObjectiveSchema schema{{"error", Direction::minimize}, {"params", Direction::minimize}, {"macs", Direction::minimize}};
  for (const auto& name : latency_devices(config)) schema.push_back({latency_objective(name), Direction::minimize});
  if (config.memory_objective) schema.push_back({"memory", Direction::minimize});
  return schema;
}

HardConstraintSet resolve_constraints(const SearchConfig& config) {
  const ObjectiveSchema schema = objective_schema(config);
  std::map<std::string, double> bounds;
  const auto add = [&](const std::string& name, double bound) {
    if (find_objective(schema, name) < 0) {
      throw ConfigError(fmt::format("hard constraint on '{}', which is not an objective of this run", name));
    }
    auto [it, fresh] = bounds.emplace(name, bound);
    if (!fresh) it->second = std::min(it->second, bound);
  };
  for (const auto& device : config.devices) {
    for (const auto& [name, bound] : device.hard_constraints) {
      add(name == "latency" ? latency_objective(device.name) : name, bound);
    }
  }
  for (const auto& [name, bound] : config.hard_constraints) {
    if (name == "latency") {
      const auto devices = latency_devices(config);
      if (devices.empty()) throw ConfigError("hard constraint on 'latency' but no device is configured");
      for (const auto& d : devices) add(latency_objective(d), bound);
    } else {
      add(name, bound);
    }
  }
  HardConstraintSet out;
  for (const auto& [name, bound] : bounds) out.push_back({name, bound, Bound::at_most});
  return out;
}

void SearchConfig::validate() const {
  if (start_depth < 1 || end_depth < start_depth) {
    throw ConfigError(fmt::format("need 1 <= start_depth <= end_depth (got {} and {})", start_depth, end_depth));
  }
  if (k < 1) throw ConfigError("k must be at least 1");
  try {
    (void)space_size(static_cast<std::size_t>(end_depth));
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("end_depth {}: {}", end_depth, e.what()));
  }
  macro.validate();
  (void)make_evaluator(evaluator);
  if (evaluator.id == "trainer") {
    using D = SyntheticDataset;
    if (macro.height != D::kHeight || macro.width != D::kWidth || macro.channels != D::kChannels ||
        macro.num_classes != D::kClasses) {
      throw ConfigError("the trainer evaluator needs an 8x8x3 macro with 4 classes");
    }
    if (evaluator.train.epochs < 1) throw ConfigError("trainer epochs must be at least 1");
  }
  std::set<std::string> names;
  for (const auto& d : latency_devices(*this)) {
    if (!names.insert(d).second) throw ConfigError(fmt::format("device '{}' is configured twice", d));
  }
  if (measure_latency && (measure.repeats < 3 || measure.warmup < 1)) {
    throw ConfigError("measured latency needs repeats >= 3 and warmup >= 1");
  }
  if (surrogate.epochs < 1 || surrogate.batch_size < 1 || surrogate.embedding_size < 1 || surrogate.hidden_size < 1 ||
      !(surrogate.learning_rate >= 0)) {
    throw ConfigError("surrogate settings must be positive");
  }
  (void)resolve_constraints(*this);
}

ObjectiveVector objective_vector(const Candidate& c, const std::shared_ptr<const ObjectiveSchema>& schema,
                                 bool predicted) {
  ObjectiveVector v{schema, Eigen::VectorXd(static_cast<Eigen::Index>(schema->size()))};
  std::size_t latency = 0;
  for (std::size_t j = 0; j < schema->size(); ++j) {
    const std::string& name = (*schema)[j].name;
    double x = 0.0;
    if (name == "error") {
      if (predicted) {
        if (!c.predicted) throw std::logic_error(fmt::format("'{}' has no prediction", c.cell.str()));
        x = 1.0 - *c.predicted;
      } else {
        if (!c.evaluation) throw std::logic_error(fmt::format("'{}' has not been evaluated", c.cell.str()));
        x = c.evaluation->error_rate();
      }
    } else if (name == "params") {
      x = static_cast<double>(c.cost.params);
    } else if (name == "macs") {
      x = static_cast<double>(c.cost.macs);
    } else if (name == "memory") {
      x = static_cast<double>(c.memory);
    } else if (is_latency(name)) {
      x = c.latency.at(latency++).seconds;
    } else {
      throw SchemaError(fmt::format("unknown objective '{}'", name));
    }
    v.values[static_cast<Eigen::Index>(j)] = x;
  }
  return v;
}

namespace {

class Engine {
 public:
  Engine(const SearchConfig& config, const Evaluator& evaluator, const RunHooks& hooks)
      : config_(config), evaluator_(evaluator), hooks_(hooks) {
    config_.validate();
    ledger_.config = config_;
    ledger_.schema = make_schema(objective_schema(config_));
    constraints_ = resolve_constraints(config_);
  }

  RunLedger run() {
    std::vector<CellSpec> base = enumerate(static_cast<std::size_t>(config_.start_depth));
    std::sort(base.begin(), base.end(), CanonicalLess{});
    if (base.size() > config_.k) base.resize(config_.k);

    std::vector<Candidate> scored;
    for (const auto& cell : base) scored.push_back(score(cell, 0));
    for (auto& c : scored) evaluate(c);
    std::vector<ObjectiveVector> vectors;
    for (const auto& c : scored) vectors.push_back(objective_vector(c, ledger_.schema, false));
    const std::vector<std::size_t> feasible = filter_hard(vectors, constraints_);
    if (feasible.empty()) throw InfeasibleError(config_.start_depth, violated_constraints(vectors, constraints_));
    std::vector<CellSpec> population;
    for (std::size_t i : feasible) {
      scored[i].selected = true;
      population.push_back(scored[i].cell);
    }
    append(std::move(scored));
    SurrogateModel<double> model = refit(0);

    for (int depth = config_.start_depth; depth < config_.end_depth; ++depth) {
      const int iteration = depth - config_.start_depth + 1;
      std::set<CellSpec, CanonicalLess> children;
      for (const auto& parent : population) {
        for (auto& child : mutate(parent)) children.insert(std::move(child));
      }
      scored.clear();
      vectors.clear();
      std::vector<std::string> keys;
      for (const auto& cell : children) {
        Candidate c = score(cell, iteration);
        c.predicted = model.predict(cell);
        vectors.push_back(objective_vector(c, ledger_.schema, true));
        keys.push_back(cell.str());
        scored.push_back(std::move(c));
      }
      const std::vector<std::size_t> chosen =
          select_k(vectors, keys, config_.k, constraints_, SelectOptions{config_.mode, "error"});
      if (chosen.empty()) throw InfeasibleError(depth + 1, violated_constraints(vectors, constraints_));
      population.clear();
      std::vector<std::size_t> order(chosen);
      std::sort(order.begin(), order.end());
      for (std::size_t i : order) {
        scored[i].selected = true;
        evaluate(scored[i]);
        population.push_back(scored[i].cell);
      }
      append(std::move(scored));
      model = refit(iteration);
    }

    std::vector<std::size_t> members;
    vectors.clear();
    for (std::size_t i = 0; i < ledger_.candidates.size(); ++i) {
      const Candidate& c = ledger_.candidates[i];
      if (c.selected && c.evaluation) {
        members.push_back(i);
        vectors.push_back(objective_vector(c, ledger_.schema, false));
      }
    }
    for (std::size_t f : pareto_front(vectors)) ledger_.front.push_back(members[f]);
    return std::move(ledger_);
  }

 private:
  Candidate score(const CellSpec& cell, int iteration) const {
    Candidate c;
    c.cell = cell;
    c.iteration = iteration;
    c.cost = network_cost(config_.macro, cell);
    c.memory = c.cost.param_bytes + c.cost.peak_activation_bytes;
    for (const auto& d : config_.devices) c.latency.push_back(profile_latency(d, config_.macro, cell));
    if (config_.measure_latency) c.latency.push_back(measure_latency(config_.macro, cell, config_.measure));
    return c;
  }

  void evaluate(Candidate& c) {
    const std::string key = c.cell.str();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, evaluator_.evaluate(c.cell, config_.macro, config_.seed)).first;
    c.evaluation = it->second;
  }

  void append(std::vector<Candidate> batch) {
    for (auto& c : batch) ledger_.candidates.push_back(std::move(c));
  }

  SurrogateModel<double> refit(int iteration) {
    TrainSet data;
    for (const auto& c : ledger_.candidates) {
      if (c.evaluation) data.push_back(make_pair(c.cell, c.evaluation->accuracy));
    }
    SurrogateModel<double> model(config_.seed + static_cast<std::uint64_t>(iteration), config_.surrogate);
    if (data.size() < 2) return model;
    IterationLog log{iteration, data.size(), model.fit(data)};
    ledger_.surrogate_logs.push_back(std::move(log));
    if (hooks_.on_fit) hooks_.on_fit(iteration, model);
    return model;
  }

  SearchConfig config_;
  const Evaluator& evaluator_;
  const RunHooks& hooks_;
  RunLedger ledger_;
  HardConstraintSet constraints_;
  std::map<std::string, Evaluation> cache_;
};

}  // namespace

RunLedger run(const SearchConfig& config, const Evaluator& evaluator, const RunHooks& hooks) {
  return Engine(config, evaluator, hooks).run();
}

RunLedger run(const SearchConfig& config, const RunHooks& hooks) {
  const auto evaluator = make_evaluator(config.evaluator);
  return run(config, *evaluator, hooks);
}

std::size_t device_pick(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                        std::span<const std::size_t> front, std::size_t error, std::size_t latency) {
  if (front.empty()) throw std::invalid_argument("device_pick: empty front");
  const auto e = [&](std::size_t i) { return points[i].values[static_cast<Eigen::Index>(error)]; };
  const auto l = [&](std::size_t i) { return points[i].values[static_cast<Eigen::Index>(latency)]; };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i : front) {
    lo = std::min(lo, e(i));
    hi = std::max(hi, e(i));
  }
  const double cutoff = lo + 0.1 * (hi - lo);
  std::optional<std::size_t> best;
  for (std::size_t i : front) {
    if (e(i) > cutoff) continue;
    if (!best || l(i) < l(*best) || (l(i) == l(*best) && keys[i] < keys[*best])) best = i;
  }
  return *best;
}

std::size_t panacea_pick(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                         std::span<const std::size_t> front, std::span<const std::size_t> objectives) {
  if (front.empty()) throw std::invalid_argument("panacea_pick: empty front");
  const double span = front.size() > 1 ? static_cast<double>(front.size() - 1) : 1.0;
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i : front) {
    double worst = 0.0;
    for (std::size_t j : objectives) {
      const bool maximize = (*points[i].schema)[j].direction == Direction::maximize;
      const auto at = [&](std::size_t m) { return points[m].values[static_cast<Eigen::Index>(j)]; };
      std::size_t better = 0;
      for (std::size_t m : front) {
        if (maximize ? at(m) > at(i) : at(m) < at(i)) ++better;
      }
      worst = std::max(worst, static_cast<double>(better) / span);
    }
    if (!best || worst < best_score || (worst == best_score && keys[i] < keys[*best])) {
      best = i;
      best_score = worst;
    }
  }
  return *best;
}

FinalReport final_report(const RunLedger& ledger) {
  FinalReport report;
  report.front = ledger.front;
  if (ledger.front.empty()) throw std::logic_error("final_report: ledger has no front");
  std::vector<ObjectiveVector> points;
  std::vector<std::string> keys;
  for (const auto& c : ledger.candidates) {
    points.push_back(c.evaluation ? objective_vector(c, ledger.schema, false)
                                  : ObjectiveVector{ledger.schema, Eigen::VectorXd::Zero(0)});
    keys.push_back(c.cell.str());
  }
  const ObjectiveSchema& schema = *ledger.schema;
  std::vector<std::size_t> shared, latencies;
  for (std::size_t j = 0; j < schema.size(); ++j) (is_latency(schema[j].name) ? latencies : shared).push_back(j);
  const std::size_t error = static_cast<std::size_t>(find_objective(schema, "error"));

  if (latencies.empty()) {
    report.picks.push_back({"panacea-pick", "", panacea_pick(points, keys, ledger.front, shared)});
    return report;
  }
  for (std::size_t lat : latencies) {
    const std::string device = schema[lat].name.substr(kLatencyPrefix.size());
    std::vector<std::size_t> objectives = shared;
    objectives.push_back(lat);
    report.picks.push_back({"device-pick", device, device_pick(points, keys, ledger.front, error, lat)});
    report.picks.push_back({"panacea-pick", device, panacea_pick(points, keys, ledger.front, objectives)});
  }
  return report;
}

std::string ledger_csv(const RunLedger& ledger) {
  CsvTable t;
  t.header = {"iteration", "depth", "cell", "accuracy", "predicted", "params", "macs"};
  for (const auto& o : *ledger.schema) {
    if (is_latency(o.name)) t.header.push_back(o.name);
  }
  t.header.push_back("memory");
  t.header.push_back("selected");
  for (const auto& c : ledger.candidates) {
    std::vector<std::string> row{std::to_string(c.iteration), std::to_string(c.depth()), c.cell.str(),
                                 c.evaluation ? format_double(c.evaluation->accuracy) : "",
                                 c.predicted ? format_double(*c.predicted) : "", std::to_string(c.cost.params),
                                 std::to_string(c.cost.macs)};
    for (const auto& l : c.latency) row.push_back(format_double(l.seconds));
    row.push_back(std::to_string(c.memory));
    row.push_back(c.selected ? "1" : "0");
    t.rows.push_back(std::move(row));
  }
  return to_csv(t);
}

std::string latency_csv(const RunLedger& ledger) {
  CsvTable t;
  t.header = {"device", "cell", "seconds", "method", "repeats"};
  for (const auto& c : ledger.candidates) {
    for (const auto& l : c.latency) {
      t.rows.push_back({l.device_name, l.cell, format_double(l.seconds), std::string(to_string(l.method)),
                        std::to_string(l.repeats)});
    }
  }
  return to_csv(t);
}

std::string surrogate_log_csv(const RunLedger& ledger) {
  CsvTable t;
  t.header = {"iteration", "training_pairs", "epoch", "loss"};
  for (const auto& log : ledger.surrogate_logs) {
    for (std::size_t e = 0; e < log.fit.epoch_loss.size(); ++e) {
      t.rows.push_back({std::to_string(log.iteration), std::to_string(log.training_pairs), std::to_string(e),
                        format_double(log.fit.epoch_loss[e])});
    }
  }
  return to_csv(t);
}

std::string front_json(const RunLedger& ledger, const FinalReport& report) {
  using nlohmann::ordered_json;
  ordered_json doc;
  ordered_json objectives = ordered_json::array();
  for (const auto& o : *ledger.schema) {
    objectives.push_back({{"name", o.name}, {"direction", o.direction == Direction::minimize ? "min" : "max"}});
  }
  doc["objectives"] = objectives;
  ordered_json members = ordered_json::array();
  for (std::size_t i : report.front) {
    const Candidate& c = ledger.candidates[i];
    const ObjectiveVector v = objective_vector(c, ledger.schema, false);
    ordered_json values = ordered_json::object();
    for (std::size_t j = 0; j < ledger.schema->size(); ++j) values[(*ledger.schema)[j].name] = v.values[static_cast<Eigen::Index>(j)];
    members.push_back({{"cell", c.cell.str()},
                       {"iteration", c.iteration},
                       {"accuracy", c.evaluation->accuracy},
                       {"objectives", values}});
  }
  doc["front"] = members;
  ordered_json picks = ordered_json::array();
  for (const auto& p : report.picks) {
    picks.push_back({{"kind", p.kind}, {"device", p.device}, {"cell", ledger.candidates[p.candidate].cell.str()}});
  }
  doc["picks"] = picks;
  return doc.dump(2) + "\n";
}

void write_run_files(const RunLedger& ledger, const FinalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", (dir / name).string()));
  };
  put("ledger.csv", ledger_csv(ledger));
  put("latency.csv", latency_csv(ledger));
  put("surrogate_log.csv", surrogate_log_csv(ledger));
  put("front.json", front_json(ledger, report));
}

}  // namespace dpp
