#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpp/cellspace.hpp"
#include "dpp/costmodel.hpp"
#include "dpp/devices.hpp"
#include "dpp/evaluator.hpp"
#include "dpp/pareto.hpp"
#include "dpp/surrogate.hpp"

namespace dpp {

// No candidate at some depth satisfies the hard constraints.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(int depth, std::vector<std::string> violated);
  int depth() const noexcept { return depth_; }
  const std::vector<std::string>& violated() const noexcept { return violated_; }

 private:
  int depth_;
  std::vector<std::string> violated_;
};

struct EvaluatorConfig {
  std::string id = "oracle";  // oracle | oracle-noiseless | trainer
  TrainOptions train;         // trainer only
};

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorConfig& config);

inline constexpr std::string_view kLatencyPrefix = "latency@";
std::string latency_objective(std::string_view device);

struct SearchConfig {
  int start_depth = 2;
  int end_depth = 4;
  std::size_t k = 128;
  SelectionMode mode = SelectionMode::dpp;
  EvaluatorConfig evaluator;
  MacroConfig macro = MacroConfig::cifar();
  std::vector<DeviceProfile> devices;
  bool measure_latency = false;  // adds latency@host
  MeasureOptions measure;
  bool memory_objective = false;
  // Upper bounds by objective name. "latency" stands for every device latency.
  // Profile hard_constraints are merged in, with "latency" meaning that device.
  std::map<std::string, double> hard_constraints;
  SurrogateConfig surrogate;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// error, params, macs, then latency@<device> per profile (and host when
// measured), then memory if enabled. All minimized.
ObjectiveSchema objective_schema(const SearchConfig& config);
HardConstraintSet resolve_constraints(const SearchConfig& config);

struct Candidate {
  CellSpec cell;
  int iteration = 0;
  std::optional<Evaluation> evaluation;
  std::optional<double> predicted;  // surrogate accuracy
  CostReport cost;
  std::vector<LatencyReport> latency;  // one per latency objective, schema order
  std::int64_t memory = 0;
  bool selected = false;

  std::size_t depth() const { return cell.depth(); }
};

struct IterationLog {
  int iteration = 0;
  std::size_t training_pairs = 0;
  FitLog fit;
};

struct RunLedger {
  SearchConfig config;
  std::shared_ptr<const ObjectiveSchema> schema;
  std::vector<Candidate> candidates;  // rows in iteration, then canonical order
  std::vector<IterationLog> surrogate_logs;
  std::vector<std::size_t> front;  // candidate indices, observed error
};

// Objective values of a candidate; error comes from the observed accuracy, or
// from the prediction when `predicted` is set.
ObjectiveVector objective_vector(const Candidate& candidate, const std::shared_ptr<const ObjectiveSchema>& schema,
                                 bool predicted);

struct RunHooks {
  // Called after every surrogate fit.
  std::function<void(int iteration, const SurrogateModel<double>&)> on_fit;
};

RunLedger run(const SearchConfig& config, const Evaluator& evaluator, const RunHooks& hooks = {});
RunLedger run(const SearchConfig& config, const RunHooks& hooks = {});

// Picks on a front. `error` and `latency` index into the schema.
// device pick: among members whose error lies within the best tenth of the
// front's error range, the one with the lowest latency.
// panacea pick: the member whose worst normalized rank over `objectives` is
// smallest; rank = 1 + number of members strictly better, normalized to [0, 1].
// Ties go to the canonically smaller key.
std::size_t device_pick(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                        std::span<const std::size_t> front, std::size_t error, std::size_t latency);
std::size_t panacea_pick(std::span<const ObjectiveVector> points, std::span<const std::string> keys,
                         std::span<const std::size_t> front, std::span<const std::size_t> objectives);

struct Pick {
  std::string kind;    // device-pick | panacea-pick
  std::string device;  // empty when no device is configured
  std::size_t candidate = 0;
};

struct FinalReport {
  std::vector<std::size_t> front;
  std::vector<Pick> picks;
};

FinalReport final_report(const RunLedger& ledger);

// One row per candidate: iteration, depth, cell, accuracy, predicted, params,
// macs, one column per latency objective, memory, selected.
std::string ledger_csv(const RunLedger& ledger);
// device, cell, seconds, method, repeats
std::string latency_csv(const RunLedger& ledger);
// iteration, training_pairs, epoch, loss
std::string surrogate_log_csv(const RunLedger& ledger);
std::string front_json(const RunLedger& ledger, const FinalReport& report);

// ledger.csv, latency.csv, surrogate_log.csv and front.json into dir.
void write_run_files(const RunLedger& ledger, const FinalReport& report, const std::filesystem::path& dir);

}  // namespace dpp
