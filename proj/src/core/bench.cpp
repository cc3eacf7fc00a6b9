#include "core/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "core/model.hpp"
#include "core/version.hpp"

namespace gnnbench {

namespace fs = std::filesystem;

bool cell_excluded(const std::string& pa, const std::string& pd, const std::string& ea,
                   const std::string& ed, bool rule_enabled) {
  if (!rule_enabled) return false;
  const bool pois_atk = pa != "none";
  const bool evas_atk = ea != "none";
  const bool pois_def = pd != "none";
  const bool evas_def = ed != "none";
  // poison attack alone: an evasion defense runs only next to a poison defense
  if (pois_atk && !evas_atk && evas_def && !pois_def) return true;
  // both attacks: only fully combined defenses were measured
  if (pois_atk && evas_atk && !(pois_def && evas_def)) return true;
  return false;
}

std::vector<GridCell> expand_grid(const TrustConfig& base) {
  auto list_or_none = [&](const std::string& key) {
    std::vector<std::string> v =
        base.has(key) ? base.get_list(key) : std::vector<std::string>{"none"};
    if (v.empty()) v.push_back("none");
    return v;
  };
  const auto pas = list_or_none("grid.poison_attacks");
  const auto pds = list_or_none("grid.poison_defenses");
  const auto eas = list_or_none("grid.evasion_attacks");
  const auto eds = list_or_none("grid.evasion_defenses");
  const bool rule = base.get_bool("grid.exclusion_rule", true);

  std::vector<GridCell> cells;
  for (const auto& pa : pas)
    for (const auto& ea : eas)
      for (const auto& pd : pds)
        for (const auto& ed : eds) {
          GridCell cell;
          cell.poison_attack = pa;
          cell.poison_defense = pd;
          cell.evasion_attack = ea;
          cell.evasion_defense = ed;
          cell.excluded = cell_excluded(pa, pd, ea, ed, rule);

          TrustConfig cc = base;
          cc.erase_section("grid");
          // keep only the method sections this cell uses
          for (const char* id :
               {"fgsm", "pgd", "pgd_structure", "random_poison", "clga", "qattack"}) {
            if (pa != id && ea != id) cc.erase_section(std::string("attack.") + id);
          }
          for (const char* id :
               {"jaccard", "adv_train", "grad_reg", "distill", "quantize", "autoencoder"}) {
            if (pd != id && ed != id) cc.erase_section(std::string("defense.") + id);
          }
          cc.set("run.poison_attack", pa);
          cc.set("run.poison_defense", pd);
          cc.set("run.evasion_attack", ea);
          cc.set("run.evasion_defense", ed);
          cell.hash = cc.hash();
          cell.config = std::move(cc);
          cells.push_back(std::move(cell));
        }
  return cells;
}

GraphDataset dataset_from_config(const TrustConfig& cfg) {
  const std::string kind = cfg.get_str("dataset.kind", "sbm");
  if (kind == "karate") return karate_club();
  if (kind == "sbm") {
    return sbm_generate(cfg.get_int("dataset.n", 300), cfg.get_int("dataset.blocks", 3),
                        cfg.get_double("dataset.p_in", 0.1), cfg.get_double("dataset.p_out", 0.01),
                        cfg.get_int("dataset.features", 24),
                        static_cast<uint64_t>(cfg.get_int("dataset.seed", 7)));
  }
  if (kind == "files") {
    return load_dataset(cfg.get_str("dataset.edges"), cfg.get_str("dataset.features"),
                        cfg.get_str("dataset.labels"));
  }
  if (kind == "dir") return load_dataset_dir(cfg.get_str("dataset.path"));
  throw std::runtime_error("config: unknown dataset.kind '" + kind + "'");
}

std::vector<BlockSpec> model_spec_from_config(const TrustConfig& cfg, const GraphDataset& g) {
  const std::string arch = cfg.get_str("model.arch", "gcn2");
  const int64_t hidden = cfg.get_int("model.hidden", 16);
  if (arch == "gcn2") return gcn2_spec(g.feature_dim(), hidden, g.num_classes);
  if (arch == "gin2") return gin2_spec(g.feature_dim(), hidden, g.num_classes);
  throw std::runtime_error("config: unknown model.arch '" + arch + "'");
}

RunPlan plan_from_config(const TrustConfig& cell_config, uint64_t seed) {
  RunPlan plan;
  plan.params = cell_config;
  plan.train.epochs = cell_config.get_int("train.epochs", 200);
  plan.train.train_fraction = cell_config.get_double("train.train_fraction", 0.8);
  plan.train.seed = seed;
  if (cell_config.has("train.lr")) plan.train.lr = cell_config.get_double("train.lr");
  if (cell_config.has("train.early_stopping_patience")) {
    plan.train.early_stopping_patience = cell_config.get_int("train.early_stopping_patience");
    plan.train.early_stopping_min_delta =
        cell_config.get_double("train.early_stopping_min_delta", 0.0);
  }
  plan.poison_attack = cell_config.get_str("run.poison_attack", "none");
  plan.poison_defense = cell_config.get_str("run.poison_defense", "none");
  plan.evasion_attack = cell_config.get_str("run.evasion_attack", "none");
  plan.evasion_defense = cell_config.get_str("run.evasion_defense", "none");
  return plan;
}

namespace {

struct Task {
  const GridCell* cell;
  uint64_t seed;
};

std::optional<double> read_footer_value(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) {
      const std::string v = line.substr(key.size() + 1);
      double x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec == std::errc{}) return x;
    }
  }
  return std::nullopt;
}

RunRecord record_from_dir(const std::string& dir) {
  RunRecord rec;
  rec.dir = dir;
  TrustConfig cc = TrustConfig::parse_file((fs::path(dir) / "config.canonical").string());
  rec.config_hash = cc.hash();
  rec.poison_attack = cc.get_str("run.poison_attack", "none");
  rec.poison_defense = cc.get_str("run.poison_defense", "none");
  rec.evasion_attack = cc.get_str("run.evasion_attack", "none");
  rec.evasion_defense = cc.get_str("run.evasion_defense", "none");
  const std::string metrics_path = (fs::path(dir) / "metrics.csv").string();
  auto acc = read_footer_value(metrics_path, "test_acc");
  auto seed = read_footer_value(metrics_path, "seed");
  if (!acc || !seed) throw std::runtime_error("run record incomplete: " + dir);
  rec.test_acc = *acc;
  rec.seed = static_cast<uint64_t>(*seed);
  return rec;
}

}  // namespace

GridOutcome run_grid(const TrustConfig& config, const std::string& out_dir,
                     const RunGridOptions& opts) {
  std::vector<GridCell> cells = expand_grid(config);
  const int64_t repeats = opts.repeats.value_or(config.get_int("grid.repeats", 15));
  const uint64_t base_seed =
      opts.base_seed.value_or(static_cast<uint64_t>(config.get_int("grid.base_seed", 100)));
  if (repeats < 1) throw std::invalid_argument("run_grid: repeats must be >= 1");

  GraphDataset dataset = dataset_from_config(config);
  fs::create_directories(out_dir);

  std::vector<Task> tasks;
  for (const auto& cell : cells) {
    if (cell.excluded) continue;
    for (int64_t r = 0; r < repeats; ++r) tasks.push_back({&cell, base_seed + r});
  }

  GridOutcome outcome;
  std::mutex out_mu;
  std::atomic<size_t> next{0};
  std::atomic<int64_t> executed{0}, failed{0};
  PoisonCache poison_cache;

  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      const fs::path dir = fs::path(out_dir) / task.cell->hash / std::to_string(task.seed);
      const fs::path metrics_path = dir / "metrics.csv";
      try {
        if (!opts.force && fs::exists(metrics_path)) {
          RunRecord rec = record_from_dir(dir.string());
          std::lock_guard<std::mutex> lock(out_mu);
          outcome.records.push_back(std::move(rec));
          continue;
        }
        std::vector<BlockSpec> spec = model_spec_from_config(task.cell->config, dataset);
        RunPlan plan = plan_from_config(task.cell->config, task.seed);
        plan.model_spec = spec;

        GraphDataset ds = dataset;
        auto [train_mask, test_mask] =
            split_masks(ds.n, plan.train.train_fraction, task.seed);
        ds.train_mask = std::move(train_mask);
        ds.test_mask = std::move(test_mask);

        RunResult res = train_and_evaluate(ds, plan, &poison_cache);
        res.metrics.config_hash = task.cell->hash;

        fs::create_directories(dir);
        {
          std::ofstream out(dir / "config.canonical");
          out << task.cell->config.canonical_text();
        }
        {
          std::ofstream out(metrics_path);
          out << res.metrics.to_csv();
        }
        {
          std::ofstream out(dir / "trace.log");
          out << res.trace.to_string();
        }
        save_model(res.model, (dir / "model.ckpt").string());

        RunRecord rec;
        rec.config_hash = task.cell->hash;
        rec.seed = task.seed;
        rec.poison_attack = task.cell->poison_attack;
        rec.poison_defense = task.cell->poison_defense;
        rec.evasion_attack = task.cell->evasion_attack;
        rec.evasion_defense = task.cell->evasion_defense;
        rec.test_acc = res.metrics.test_acc;
        rec.dir = dir.string();
        ++executed;
        std::lock_guard<std::mutex> lock(out_mu);
        outcome.records.push_back(std::move(rec));
        if (!opts.quiet)
          std::cerr << "[run " << outcome.records.size() << "/" << tasks.size() << "] "
                    << task.cell->poison_attack << "/" << task.cell->poison_defense << "/"
                    << task.cell->evasion_attack << "/" << task.cell->evasion_defense
                    << " seed=" << task.seed << " acc=" << rec.test_acc << "\n";
      } catch (const std::exception& e) {
        ++failed;
        std::lock_guard<std::mutex> lock(out_mu);
        std::cerr << "run failed (" << dir.string() << "): " << e.what() << "\n";
      }
    }
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  outcome.executed = executed.load();
  outcome.failed = failed.load();
  std::sort(outcome.records.begin(), outcome.records.end(),
            [](const RunRecord& a, const RunRecord& b) {
              return std::tie(a.config_hash, a.seed) < std::tie(b.config_hash, b.seed);
            });
  return outcome;
}

std::vector<RunRecord> load_records(const std::string& out_dir) {
  std::vector<RunRecord> records;
  if (!fs::exists(out_dir)) throw std::runtime_error("runs directory not found: " + out_dir);
  for (const auto& hash_dir : fs::directory_iterator(out_dir)) {
    if (!hash_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(hash_dir.path())) {
      if (!seed_dir.is_directory()) continue;
      if (!fs::exists(seed_dir.path() / "metrics.csv")) continue;
      records.push_back(record_from_dir(seed_dir.path().string()));
    }
  }
  std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.config_hash, a.seed) < std::tie(b.config_hash, b.seed);
  });
  return records;
}

namespace {

int64_t round_half_away(double v) { return std::llround(v); }

std::vector<std::string> ordered_unique(const std::vector<RunRecord>& records,
                                        std::string RunRecord::*field) {
  std::vector<std::string> out;
  auto push = [&](const std::string& s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  };
  push("none");  // the "no defense" option leads, as in the conflict tables
  for (const auto& r : records) push(r.*field);
  // drop the leading "none" if nothing used it
  if (std::none_of(records.begin(), records.end(),
                   [&](const RunRecord& r) { return r.*field == "none"; }))
    out.erase(out.begin());
  return out;
}

}  // namespace

const SummaryCell* SummaryTable::find(const std::string& pd, const std::string& ed) const {
  for (const auto& c : cells)
    if (c.poison_defense == pd && c.evasion_defense == ed) return &c;
  return nullptr;
}

std::vector<SummaryTable> summarize(const std::vector<RunRecord>& records) {
  std::vector<std::pair<std::string, std::string>> combos;
  for (const auto& r : records) {
    auto key = std::make_pair(r.poison_attack, r.evasion_attack);
    if (std::find(combos.begin(), combos.end(), key) == combos.end()) combos.push_back(key);
  }
  std::sort(combos.begin(), combos.end());

  std::vector<SummaryTable> tables;
  for (const auto& [pa, ea] : combos) {
    std::vector<RunRecord> subset;
    for (const auto& r : records)
      if (r.poison_attack == pa && r.evasion_attack == ea) subset.push_back(r);

    SummaryTable table;
    table.poison_attack = pa;
    table.evasion_attack = ea;
    table.row_labels = ordered_unique(subset, &RunRecord::poison_defense);
    table.col_labels = ordered_unique(subset, &RunRecord::evasion_defense);

    for (const auto& pd : table.row_labels)
      for (const auto& ed : table.col_labels) {
        SummaryCell cell;
        cell.poison_defense = pd;
        cell.evasion_defense = ed;
        std::vector<double> accs;
        for (const auto& r : subset)
          if (r.poison_defense == pd && r.evasion_defense == ed) accs.push_back(r.test_acc);
        cell.repeats = static_cast<int64_t>(accs.size());
        if (accs.empty()) {
          cell.excluded = true;
        } else {
          double mean = 0;
          for (double a : accs) mean += a;
          mean /= static_cast<double>(accs.size());
          double var = 0;
          for (double a : accs) var += (a - mean) * (a - mean);
          const double stddev =
              accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
          cell.mean_pct = round_half_away(mean * 100.0);
          cell.std_pct = round_half_away(stddev * 100.0);
        }
        table.cells.push_back(std::move(cell));
      }
    tables.push_back(std::move(table));
  }
  return tables;
}

std::string defense_display_name(const std::string& id, bool poison_slot) {
  if (id == "none") return poison_slot ? "No PoisDefense" : "No EvDefense";
  if (id == "jaccard") return "Jaccard";
  if (id == "adv_train") return "AdvTrain";
  if (id == "grad_reg") return "GradReg";
  if (id == "distill") return "Distill";
  if (id == "quantize") return "Quantize";
  if (id == "autoencoder") return "Autoencoder";
  return id;
}

std::string emit_table(const SummaryTable& table, const std::string& format) {
  std::ostringstream os;
  if (format == "markdown" || format == "md") {
    os << "**attacks: poison=" << table.poison_attack << ", evasion=" << table.evasion_attack
       << "**\n\n";
    os << "| \xE2\x80\x94 |";
    for (const auto& ed : table.col_labels) os << " " << defense_display_name(ed, false) << " |";
    os << "\n|";
    for (size_t i = 0; i <= table.col_labels.size(); ++i) os << " --- |";
    os << "\n";
    size_t idx = 0;
    for (const auto& pd : table.row_labels) {
      os << "| " << defense_display_name(pd, true) << " |";
      for (size_t c = 0; c < table.col_labels.size(); ++c, ++idx) {
        const SummaryCell& cell = table.cells[idx];
        if (cell.excluded)
          os << " \xE2\x80\x94 |";
        else
          os << " " << cell.mean_pct << " \xC2\xB1 " << cell.std_pct << " |";
      }
      os << "\n";
    }
    return os.str();
  }
  if (format == "csv") {
    os << "poison_attack,evasion_attack,poison_defense,evasion_defense,mean_pct,std_pct,repeats,"
          "status\n";
    for (const auto& cell : table.cells) {
      os << table.poison_attack << ',' << table.evasion_attack << ',' << cell.poison_defense
         << ',' << cell.evasion_defense << ',';
      if (cell.excluded)
        os << ",,0,excluded";
      else
        os << cell.mean_pct << ',' << cell.std_pct << ',' << cell.repeats << ",ok";
      os << '\n';
    }
    return os.str();
  }
  throw std::invalid_argument("emit_table: unknown format '" + format + "' (use markdown|csv)");
}

}  // namespace gnnbench
