// gnnbench command line. Links only the public C API.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "gnnbench.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int status_to_exit(gnnb_status s) {
  switch (s) {
    case GNNB_OK: return kExitOk;
    case GNNB_ERR_INVALID_ARGUMENT: return kExitValidation;
    default: return kExitRuntime;
  }
}

int report_failure(gnnb_status s, const std::string& context) {
  std::cerr << "gnnbench: " << context << ": " << gnnb_last_error() << "\n";
  return status_to_exit(s);
}

struct ConfigHandle {
  gnnb_config* ptr = nullptr;
  ~ConfigHandle() { gnnb_config_free(ptr); }
};

std::string env_or(const char* name, const std::string& dflt) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : dflt;
}

int env_jobs() {
  const char* v = std::getenv("GNNBENCH_JOBS");
  if (v && *v) {
    const int j = std::atoi(v);
    if (j >= 1) return j;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gnnbench — GNN attack/defense/interpretation benchmark"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "run the configured experiment grid");
  std::string run_config, run_out = env_or("GNNBENCH_OUT", "out");
  int run_repeats = 0;
  long long run_seed = -1;
  int run_jobs = env_jobs();
  bool run_force = false;
  run_cmd->add_option("--config", run_config, "experiment config file")->required();
  run_cmd->add_option("--out", run_out, "output directory (default $GNNBENCH_OUT or ./out)");
  run_cmd->add_option("--repeats", run_repeats, "override grid repeats");
  run_cmd->add_option("--seed", run_seed, "override grid base seed");
  run_cmd->add_option("--jobs", run_jobs, "parallel runs (default $GNNBENCH_JOBS or 1)");
  run_cmd->add_flag("--force", run_force, "recompute existing records");

  // table
  auto* table_cmd = app.add_subcommand("table", "summarize persisted runs");
  std::string table_runs, table_format = "md";
  table_cmd->add_option("--runs", table_runs, "runs directory")->required();
  table_cmd->add_option("--format", table_format, "md or csv")
      ->check(CLI::IsMember({"md", "markdown", "csv"}));

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "apply a single attack, save the dataset");
  std::string attack_config, attack_out = env_or("GNNBENCH_OUT", "out") + "/attacked";
  attack_cmd->add_option("--config", attack_config, "attack config file")->required();
  attack_cmd->add_option("--out", attack_out, "output dataset directory");

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "explain one node's prediction");
  std::string ex_model, ex_dataset, ex_method = "gnn", ex_out = "explanation.txt";
  long long ex_node = 0;
  explain_cmd->add_option("--model", ex_model, "model checkpoint")->required();
  explain_cmd->add_option("--dataset", ex_dataset, "dataset directory")->required();
  explain_cmd->add_option("--node", ex_node, "target node id")->required();
  explain_cmd->add_option("--method", ex_method, "gnn or zorro")
      ->check(CLI::IsMember({"gnn", "zorro"}));
  explain_cmd->add_option("--out", ex_out, "explanation output file");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int grad_instances = 100;
  long long grad_seed = 2024;
  grad_cmd->add_option("--instances", grad_instances, "instances per op (default 100)");
  grad_cmd->add_option("--seed", grad_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitValidation;
  }

  if (run_cmd->parsed()) {
    ConfigHandle cfg;
    if (auto s = gnnb_config_parse_file(run_config.c_str(), &cfg.ptr))
      return report_failure(s, run_config);
    if (run_seed >= 0) {
      // base-seed override: rewrite the parsed config through text
      char* canonical = nullptr;
      gnnb_config_canonical(cfg.ptr, &canonical);
      std::string text(canonical);
      gnnb_string_free(canonical);
      text += "grid.base_seed = " + std::to_string(run_seed) + "\n";
      gnnb_config_free(cfg.ptr);
      cfg.ptr = nullptr;
      if (auto s = gnnb_config_parse_string(text.c_str(), &cfg.ptr))
        return report_failure(s, "seed override");
    }
    char* markdown = nullptr;
    gnnb_status s = gnnb_run_grid(cfg.ptr, run_out.c_str(), run_jobs, run_force ? 1 : 0,
                                  run_repeats, &markdown);
    if (markdown) {
      std::cout << markdown;
      gnnb_string_free(markdown);
    }
    if (s != GNNB_OK) return report_failure(s, "run");
    return kExitOk;
  }

  if (table_cmd->parsed()) {
    gnnb_records* recs = nullptr;
    if (auto s = gnnb_load_records(table_runs.c_str(), &recs))
      return report_failure(s, table_runs);
    char* text = nullptr;
    const char* fmt = table_format == "csv" ? "csv" : "markdown";
    gnnb_status s = gnnb_records_tables(recs, fmt, &text);
    gnnb_records_free(recs);
    if (s != GNNB_OK) return report_failure(s, "table");
    std::cout << text;
    gnnb_string_free(text);
    return kExitOk;
  }

  if (attack_cmd->parsed()) {
    ConfigHandle cfg;
    if (auto s = gnnb_config_parse_file(attack_config.c_str(), &cfg.ptr))
      return report_failure(s, attack_config);
    if (auto s = gnnb_attack(cfg.ptr, attack_out.c_str())) return report_failure(s, "attack");
    std::cout << "perturbed dataset written to " << attack_out << "\n";
    return kExitOk;
  }

  if (explain_cmd->parsed()) {
    double fid = 0.0;
    if (auto s = gnnb_explain(ex_model.c_str(), ex_dataset.c_str(), ex_node, ex_method.c_str(),
                              ex_out.c_str(), &fid))
      return report_failure(s, "explain");
    std::cout << "explanation written to " << ex_out << " (fidelity " << fid << ")\n";
    return kExitOk;
  }

  if (grad_cmd->parsed()) {
    char* report = nullptr;
    int all_passed = 0;
    if (auto s = gnnb_gradcheck(static_cast<uint64_t>(grad_seed), grad_instances, &report,
                                &all_passed))
      return report_failure(s, "gradcheck");
    std::cout << report;
    gnnb_string_free(report);
    return all_passed ? kExitOk : kExitRuntime;
  }

  return kExitValidation;
}
