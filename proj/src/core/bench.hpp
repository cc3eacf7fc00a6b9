#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/graph.hpp"
#include "core/pipeline.hpp"

namespace gnnbench {

/// One grid cell: a combination of the four method slots. `excluded`
/// mirrors the dash cells of the conflict experiment: with a poison attack
/// only, an evasion defense needs the poison defense alongside it; with both
/// attacks, only fully combined defenses run.
struct GridCell {
  std::string poison_attack, poison_defense, evasion_attack, evasion_defense;
  bool excluded = false;
  TrustConfig config;  // self-contained per-cell run config
  std::string hash;
};

bool cell_excluded(const std::string& pa, const std::string& pd, const std::string& ea,
                   const std::string& ed, bool rule_enabled);

/// Expands the [grid] section of a config into per-cell configs.
std::vector<GridCell> expand_grid(const TrustConfig& base);

/// Builds the dataset described by [dataset] (kind = sbm | karate | files).
GraphDataset dataset_from_config(const TrustConfig& cfg);

/// Model block list from [model] (arch = gcn2 | gin2) given the dataset dims.
std::vector<BlockSpec> model_spec_from_config(const TrustConfig& cfg, const GraphDataset& g);

RunPlan plan_from_config(const TrustConfig& cell_config, uint64_t seed);

struct RunRecord {
  std::string config_hash;
  uint64_t seed = 0;
  std::string poison_attack, poison_defense, evasion_attack, evasion_defense;
  double test_acc = 0.0;
  std::string dir;
};

struct RunGridOptions {
  int jobs = 1;
  bool force = false;
  std::optional<int64_t> repeats;
  std::optional<uint64_t> base_seed;
  bool quiet = false;
};

struct GridOutcome {
  std::vector<RunRecord> records;
  int64_t executed = 0;  // freshly computed (not reloaded) runs
  int64_t failed = 0;
};

/// Runs every non-excluded cell x repeat, persisting one record directory
/// per (config_hash, seed) under out_dir. Existing records are reused unless
/// forced. Independent runs execute on `jobs` workers.
GridOutcome run_grid(const TrustConfig& config, const std::string& out_dir,
                     const RunGridOptions& opts);

/// Reads record directories back from disk.
std::vector<RunRecord> load_records(const std::string& out_dir);

struct SummaryCell {
  std::string poison_defense, evasion_defense;
  bool excluded = false;
  bool complete = true;
  int64_t repeats = 0;
  int64_t mean_pct = 0;  // accuracy * 100, rounded half away from zero
  int64_t std_pct = 0;   // sample standard deviation * 100, same rounding
};

struct SummaryTable {
  std::string poison_attack, evasion_attack;
  std::vector<std::string> row_labels;  // poison defenses
  std::vector<std::string> col_labels;  // evasion defenses
  std::vector<SummaryCell> cells;       // row-major

  const SummaryCell* find(const std::string& pd, const std::string& ed) const;
};

/// Groups records into one table per (poison_attack, evasion_attack) combo.
std::vector<SummaryTable> summarize(const std::vector<RunRecord>& records);

std::string emit_table(const SummaryTable& table, const std::string& format);

std::string defense_display_name(const std::string& id, bool poison_slot);

}  // namespace gnnbench
