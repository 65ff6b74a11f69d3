// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any
// gated criterion fails; the host-timing stability figure is reported only.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dpp/csv.hpp"
#include "dpp/devices.hpp"
#include "dpp/engine_config.hpp"
#include "dpp/evaluator.hpp"
#include "dpp/kernels.hpp"
#include "dpp/network.hpp"
#include "dpp/pareto.hpp"
#include "dpp/searchengine.hpp"
#include "dpp/surrogate.hpp"
#include "gradcheck.hpp"
#include "pareto_oracle.hpp"
#include "rank_stats.hpp"

using namespace dpp;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

int failures = 0;

void criterion(int id, const char* title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = fmt::format("exception: {}", e.what());
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (s > budget_s) o.require(false, fmt::format("took {:.1f} s, budget {:.0f} s", s, budget_s));
  if (!o.pass) ++failures;
  fmt::print("{} [{}] {} ({:.2f} s){}{}\n", o.pass ? "PASS" : "FAIL", id, title, s, o.detail.empty() ? "" : ": ",
             o.detail);
  std::fflush(stdout);
}

Tensor4<double> random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor4<double> t(n, c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.normal();
  return t;
}

const std::string kRoot = DPP_SOURCE_DIR;

}  // namespace

int main() {
  criterion(1, "search-space counts", 1.0, [] {
    Outcome o;
    o.require(space_size(3) == 54, "space_size(3) != 54");
    o.require(space_size(4) == 324, "space_size(4) != 324");
    o.require(enumerate(3).size() == 54, "enumerate(3) size");
    o.require(enumerate(4).size() == 324, "enumerate(4) size");
    return o;
  });

  criterion(2, "mutation arithmetic", 5.0, [] {
    Outcome o;
    for (std::size_t depth = 1; depth <= 4; ++depth) {
      const std::size_t per_parent = (depth % 2 == 0) ? 3 : 6;  // new position `depth` is Norm iff even
      std::set<std::string> children;
      for (const auto& cell : enumerate(depth)) {
        const auto kids = mutate(cell);
        o.require(kids.size() == per_parent, fmt::format("{} has {} children", cell.str(), kids.size()));
        for (const auto& k : kids) children.insert(k.str());
      }
      std::set<std::string> next;
      for (const auto& c : enumerate(depth + 1)) next.insert(c.str());
      o.require(children == next, fmt::format("children of depth {} != enumerate({})", depth, depth + 1));
    }
    return o;
  });

  criterion(3, "pareto oracle equivalence", 10.0, [] {
    Outcome o;
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
      const auto pts = testing::random_points(rng, 5, 200, false);
      if (pareto_front(pts) != testing::brute_force_front(pts)) o.require(false, fmt::format("front, trial {}", trial));
      if (nondominated_sort(pts) != testing::brute_force_sort(pts)) o.require(false, fmt::format("sort, trial {}", trial));
    }
    const auto schema = make_schema({{"x", Direction::minimize}, {"y", Direction::minimize}});
    std::vector<ObjectiveVector> boxes{{schema, Eigen::Vector2d(1, 4)}, {schema, Eigen::Vector2d(3, 1)},
                                       {schema, Eigen::Vector2d(4, 5)}};
    o.require(pareto_front(boxes) == std::vector<std::size_t>{0, 1}, "three-box front != {A, B}");
    return o;
  });

  criterion(4, "kernel correctness", 60.0, [] {
    Outcome o;
    Rng rng(4);
    const auto x = random_tensor(2, 4, 6, 6, rng);
    for (LayerOp gop : {LayerOp::gconv1x1, LayerOp::gconv3x3}) {
      auto grouped = make_op<double>(gop, 4, 6, 1, rng);
      auto plain = make_op<double>(gop == LayerOp::gconv1x1 ? LayerOp::conv1x1 : LayerOp::conv3x3, 4, 6, 1, rng);
      plain.weights = grouped.weights;
      const double d = (forward(grouped, x).data - forward(plain, x).data).cwiseAbs().maxCoeff();
      o.require(d <= 1e-6, fmt::format("{} g=1 differs by {}", token_name(gop), d));
    }
    const auto x6 = random_tensor(2, 6, 5, 5, rng);
    auto dw = make_op<double>(LayerOp::dwconv3x3, 6, 6, 4, rng);
    auto g6 = make_op<double>(LayerOp::gconv3x3, 6, 6, 6, rng);
    g6.weights = dw.weights;
    const double d = (forward(dw, x6).data - forward(g6, x6).data).cwiseAbs().maxCoeff();
    o.require(d <= 1e-6, fmt::format("dwconv vs gconv(g=C) differs by {}", d));

    const int C = 12;
    const auto s = random_tensor(1, C, 2, 2, rng);
    for (int g : {1, 2, 3, 4, 6, 12}) {
      const auto y = channel_shuffle(s, g);
      for (int i = 0; i < C / g; ++i) {
        for (int j = 0; j < g; ++j) {
          if (y(0, j * (C / g) + i, 1, 1) != s(0, i * g + j, 1, 1)) o.require(false, fmt::format("shuffle g={}", g));
        }
      }
    }

    double worst = 0.0;
    for (int t = 0; t < kNumTokens; ++t) {
      const LayerOp op = token_from_index(t);
      for (int groups : {2, 4}) {
        const int c_out = (is_norm(op) || op == LayerOp::dwconv3x3) ? 4 : 8;
        auto state = make_op<double>(op, 4, c_out, groups, rng);
        for (Eigen::Index i = 0; i < state.gamma.size(); ++i) {
          state.gamma[i] = rng.uniform(0.5, 1.5);
          state.beta[i] = rng.uniform(-0.5, 0.5);
        }
        worst = std::max(worst, testing::op_gradient_error(state, random_tensor(2, 4, 6, 6, rng), rng));
      }
    }
    auto lg = make_op<double>(LayerOp::lgconv1x1, 8, 12, 4, rng);
    condense(lg);
    worst = std::max(worst, testing::op_gradient_error(lg, random_tensor(2, 8, 4, 5, rng), rng));
    MacroConfig tiny;
    tiny.stages = {{2, 4}, {1, 4}};
    tiny.height = tiny.width = 4;
    tiny.num_classes = 3;
    Network<double> net(tiny, CellSpec::parse("bn|lgconv1x1|bn_relu|gconv3x3"), 11);
    worst = std::max(worst, testing::network_gradient_error(net, random_tensor(2, 3, 4, 4, rng), rng));
    o.require(worst <= 1e-4, fmt::format("worst backward relative error {:.3g}", worst));
    if (o.pass) o.detail = fmt::format("worst backward relative error {:.2g}", worst);
    return o;
  });

  criterion(5, "cost model equals instrumented kernels", 30.0, [] {
    Outcome o;
    Rng rng(5);
    int cases = 0;
    std::set<LayerOp> ops;
    for (int t = 0; t < kNumTokens; ++t) {
      const LayerOp op = token_from_index(t);
      for (int c_in : {4, 6, 8, 12}) {
        for (int c_out : {4, 8, 12}) {
          if ((is_norm(op) || op == LayerOp::dwconv3x3) && c_out != c_in) continue;
          for (auto [h, w] : {std::pair{3, 5}, std::pair{4, 4}}) {
            for (int groups : {2, 4}) {
              auto state = make_op<float>(op, c_in, c_out, groups, rng, Mode::eval);
              Tensor4<float> x(1, c_in, h, w);
              x.data.setRandom();
              KernelStats stats;
              (void)forward(state, x, &stats);
              if (stats.macs != op_macs(op, c_in, c_out, h, w, groups) ||
                  state.param_count() != op_params(op, c_in, c_out, groups)) {
                o.require(false, fmt::format("{} {}->{} g={}", token_name(op), c_in, c_out, groups));
              }
              ops.insert(op);
              ++cases;
            }
          }
        }
      }
    }
    o.require(cases >= 50, fmt::format("only {} cases", cases));
    o.require(ops.size() == kNumTokens, "not every op covered");
    if (o.pass) o.detail = fmt::format("{} cases", cases);
    return o;
  });

  criterion(6, "surrogate gradient check, fit and ranking", 120.0, [] {
    Outcome o;
    const MacroConfig macro = MacroConfig::cifar();
    Rng rng(6);
    SurrogateModel<double> probe(6);
    const TrainSet sample{make_pair(CellSpec::parse("bn|conv3x3|id"), 0.63),
                          make_pair(CellSpec::parse("bn_relu|gconv1x1"), 0.7)};
    const double gc = gradient_check(probe, sample, rng);
    o.require(gc <= 1e-4, fmt::format("gradient check {:.3g}", gc));

    // The depth-3 space holds only 54 cells, so the 64 training cells are
    // drawn from depth 4 and the other 260 are held out.
    auto cells = enumerate(4);
    Rng pick(0);
    pick.shuffle(cells.begin(), cells.end());
    TrainSet train;
    for (int i = 0; i < 64; ++i) train.push_back(make_pair(cells[i], oracle_accuracy(cells[i], macro, 0).accuracy));
    SurrogateModel<double> model(0);
    const FitLog log = model.fit(train);
    o.require(log.final_loss() <= 0.5 * log.initial_loss(),
              fmt::format("MSE {:.3g} -> {:.3g}", log.initial_loss(), log.final_loss()));
    std::vector<double> predicted, truth;
    for (std::size_t i = 64; i < cells.size(); ++i) {
      predicted.push_back(model.predict(cells[i]));
      truth.push_back(oracle_accuracy(cells[i], macro, 0).accuracy);
    }
    const double rho = testing::spearman(predicted, truth);
    o.require(rho >= 0.5, fmt::format("held-out Spearman {:.3f}", rho));
    if (o.pass) {
      o.detail = fmt::format("grad err {:.2g}, MSE {:.3g} -> {:.3g}, Spearman {:.3f}", gc, log.initial_loss(),
                             log.final_loss(), rho);
    }
    return o;
  });

  criterion(7, "end-to-end search", 300.0, [] {
    Outcome o;
    EngineConfig cfg = load_engine_config(kRoot + "/configs/example.json");
    SearchConfig& c = cfg.search;
    c.start_depth = 2;
    c.end_depth = 4;
    c.k = 128;
    c.mode = SelectionMode::dpp;
    c.seed = 0;
    c.evaluator.id = "oracle";
    c.hard_constraints["latency@mobile-like"] = 0.3;
    const RunLedger a = run(c);
    const RunLedger b = run(c);
    const std::string text = ledger_csv(a);
    o.require(text == ledger_csv(b), "ledgers differ between runs");
    o.require(front_json(a, final_report(a)) == front_json(b, final_report(b)), "front files differ");

    // Everything below is read back from the ledger text.
    const CsvTable t = parse_csv(text);
    const auto col = [&](const char* name) { return static_cast<std::size_t>(t.column(name)); };
    std::size_t selected = 0;
    std::vector<ObjectiveVector> observed;
    std::vector<std::string> cells;
    const auto schema = make_schema(objective_schema(c));
    for (const auto& row : t.rows) {
      if (row[col("selected")] != "1") continue;
      ++selected;
      if (std::stod(row[col("latency@mobile-like")]) > 0.3) o.require(false, row[col("cell")] + " violates mu");
      ObjectiveVector v{schema, Eigen::VectorXd(static_cast<Eigen::Index>(schema->size()))};
      for (std::size_t j = 0; j < schema->size(); ++j) {
        const std::string& name = (*schema)[j].name;
        v.values[static_cast<Eigen::Index>(j)] =
            name == "error" ? 1.0 - std::stod(row[col("accuracy")]) : std::stod(row[col(name.c_str())]);
      }
      observed.push_back(v);
      cells.push_back(row[col("cell")]);
    }
    std::set<std::string> expected_front;
    for (std::size_t i : testing::brute_force_front(observed)) expected_front.insert(cells[i]);
    std::set<std::string> front;
    for (std::size_t i : a.front) front.insert(a.candidates[i].cell.str());
    o.require(front == expected_front, "front differs from brute force over the ledger");
    for (std::size_t i = 0; i < observed.size(); ++i) {
      if (!front.count(cells[i])) continue;
      for (std::size_t j = 0; j < observed.size(); ++j) {
        if (testing::oracle_dominates(observed[j], observed[i])) o.require(false, cells[i] + " is dominated");
      }
    }
    if (o.pass) o.detail = fmt::format("{} rows, {} evaluated, front {}", t.rows.size(), selected, front.size());
    return o;
  });

  criterion(8, "device-dependent latency ordering", 30.0, [] {
    Outcome o;
    const MacroConfig macro = MacroConfig::cifar();
    const DeviceProfile gpu = load_profile(kRoot + "/profiles/gpu-like.json");
    const DeviceProfile mobile = load_profile(kRoot + "/profiles/mobile-like.json");
    const auto cells = enumerate(4);
    std::vector<double> a, b;
    for (const auto& cell : cells) {
      a.push_back(profile_latency(gpu, macro, cell).seconds);
      b.push_back(profile_latency(mobile, macro, cell).seconds);
    }
    const double tau = testing::kendall_tau_b(a, b);
    const auto argmin = [&](const std::vector<double>& v) {
      return cells[static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin())].str();
    };
    o.require(tau < 1.0, fmt::format("tau {:.3f}", tau));
    o.require(argmin(a) != argmin(b), "same argmin " + argmin(a));
    o.detail = fmt::format("tau {:.3f}, argmin {} vs {}", tau, argmin(a), argmin(b));
    return o;
  });

  criterion(9, "tiny trainer", 600.0, [] {
    Outcome o;
    const MacroConfig desk = MacroConfig::desk();
    const SyntheticDataset data = make_dataset(0);
    const TrainLog log = train_network(CellSpec::parse("bn_relu|conv3x3"), desk, data, TrainOptions{}, 0);
    o.require(log.final_loss() <= 0.5 * log.initial_loss,
              fmt::format("loss {:.3g} -> {:.3g}", log.initial_loss, log.final_loss()));
    o.require(log.test_accuracy >= 0.70, fmt::format("test accuracy {:.3f}", log.test_accuracy));
    TrainOptions five;
    five.epochs = 5;
    int swept = 0;
    for (const auto& cell : enumerate(2)) {
      try {
        (void)train_network(cell, desk, data, five, 0);
        ++swept;
      } catch (const EvaluationError& e) {
        o.require(false, e.what());
      }
    }
    if (o.pass) {
      o.detail = fmt::format("loss {:.3g} -> {:.3g}, test accuracy {:.3f}, {} depth-2 cells finite", log.initial_loss,
                             log.final_loss(), log.test_accuracy, swept);
    }
    return o;
  });

  criterion(10, "host measurement sanity", 120.0, [] {
    Outcome o;
    MacroConfig wide;
    wide.stages = {{1, 64}};
    wide.height = wide.width = 16;
    wide.channels = 3;
    wide.num_classes = 10;
    const CellSpec narrow = CellSpec::parse("bn_relu|conv1x1");
    const CellSpec widened = CellSpec::parse("bn_relu|conv1x1|bn_relu|conv3x3");
    // Sign test: seven wins out of seven has probability 2^-7 < 0.01 under
    // the null of no difference.
    const MeasureOptions opts{9, 2, 0};
    int wins = 0;
    for (int trial = 0; trial < 7; ++trial) {
      const double n = measure_latency(wide, narrow, opts).seconds;
      const double w = measure_latency(wide, widened, opts).seconds;
      wins += w > n ? 1 : 0;
    }
    o.require(wins == 7, fmt::format("widened cell slower in only {}/7 trials", wins));
    const double first = measure_latency(wide, widened, {50, 10, 0}).seconds;
    const double second = measure_latency(wide, widened, {50, 10, 0}).seconds;
    const double drift = std::abs(first - second) / std::min(first, second);
    o.detail = fmt::format("{}/7 trials; repeat drift {:.1f}% ({} the 25% bound, informational)", wins, 100 * drift,
                           drift <= 0.25 ? "within" : "outside");
    return o;
  });

  fmt::print("{} criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
