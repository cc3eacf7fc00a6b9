#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/tensor.hpp"

namespace gnnbench {

enum class HookEvent {
  PoisonAttack,
  PoisonDefense,
  ModelInit,
  EvasionDefenseBefore,
  TrainStep,
  EvasionDefenseAfter,
  OptimizerStep,
  EarlyStop,
  EvasionAttack,
  PrivacyAttackSlot,
  Evaluate,
};

std::string hook_event_name(HookEvent e);

/// Ordered record of pipeline events; the evidence that a run followed the
/// train/attack/defend/evaluate sequence.
struct HookTrace {
  std::vector<std::pair<HookEvent, std::string>> events;

  void record(HookEvent e, std::string detail = "");
  std::string to_string() const;

  /// Empty string when the ordering invariants hold, else a description of
  /// the first violation: poison slots once each and before model init,
  /// every train step wrapped by defense before/after then optimizer step,
  /// evasion attack after training and before the privacy slot + evaluate.
  std::string order_violation() const;
};

struct TrainConfig {
  int64_t epochs = 200;
  double train_fraction = 0.8;
  std::optional<int64_t> early_stopping_patience;
  double early_stopping_min_delta = 0.0;
  uint64_t seed = 0;
  std::optional<double> lr;
};

struct Metrics {
  std::vector<double> train_loss;
  std::vector<double> train_acc;
  double test_acc = 0.0;
  double wall_ms = 0.0;  // not serialized; runs must be byte-reproducible
  uint64_t seed = 0;
  std::string poison_attack = "none";
  std::string poison_defense = "none";
  std::string evasion_attack = "none";
  std::string evasion_defense = "none";
  std::string config_hash;

  std::string to_csv() const;
};

/// Aborted run carrying whatever trace accumulated before the failure.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& msg, HookTrace trace)
      : std::runtime_error(msg), partial_trace(std::move(trace)) {}
  HookTrace partial_trace;
};

/// Memo for poison attacks shared across grid cells: the poisoned graph for
/// a given (method, params, dataset, seed) key is computed once.
class PoisonCache {
 public:
  GraphDataset get_or_compute(const std::string& key,
                              const std::function<GraphDataset()>& compute);

 private:
  std::mutex mu_;
  std::map<std::string, GraphDataset> store_;
};

struct RunPlan {
  std::vector<BlockSpec> model_spec;
  TrainConfig train;
  std::string poison_attack = "none";
  std::string poison_defense = "none";
  std::string evasion_defense = "none";
  std::string evasion_attack = "none";
  TrustConfig params;  // method hyperparameters ([attack.*], [defense.*])
};

struct RunResult {
  BlockModel model;
  Metrics metrics;
  HookTrace trace;
};

/// Algorithm-1 orchestration: poison attack -> poison defense -> init ->
/// epochs of (defense-before, train step, defense-after, optimizer step,
/// early-stop check) -> evasion attack on the evaluation inputs -> privacy
/// slot (recorded no-op) -> evaluate on the test mask.
RunResult train_and_evaluate(const GraphDataset& dataset, const RunPlan& plan,
                             PoisonCache* poison_cache = nullptr);

double evaluate(const BlockModel& model, const GraphDataset& dataset,
                const std::vector<uint8_t>& mask, const Tensor* features_override = nullptr,
                const GraphOps* gops_override = nullptr);

/// True when the loss has not improved by min_delta for `patience` epochs.
bool early_stop_check(const std::vector<double>& history, int64_t patience, double min_delta);

}  // namespace gnnbench
