#include "gnnbench.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "core/attack.hpp"
#include "core/bench.hpp"
#include "core/config.hpp"
#include "core/explain.hpp"
#include "core/gradcheck.hpp"
#include "core/graph.hpp"
#include "core/model.hpp"
#include "core/pipeline.hpp"
#include "core/version.hpp"

using namespace gnnbench;

struct gnnb_dataset {
  GraphDataset g;
};
struct gnnb_config {
  TrustConfig cfg;
};
struct gnnb_run_result {
  RunResult res;
};
struct gnnb_records {
  std::vector<RunRecord> records;
};

namespace {

thread_local std::string t_last_error;

gnnb_status fail(gnnb_status code, const std::string& msg) {
  t_last_error = msg;
  return code;
}

template <typename Fn>
gnnb_status guard(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    return fail(GNNB_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(GNNB_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(GNNB_ERR_RUNTIME, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

gnnb_status require(bool cond, const char* what) {
  if (cond) return GNNB_OK;
  return fail(GNNB_ERR_INVALID_ARGUMENT, std::string("null argument: ") + what);
}

}  // namespace

extern "C" {

const char* gnnb_version(void) { return kVersion; }

const char* gnnb_last_error(void) { return t_last_error.c_str(); }

void gnnb_string_free(char* s) { std::free(s); }

// ---- datasets ------------------------------------------------------------

gnnb_status gnnb_dataset_load(const char* edges_path, const char* features_path,
                              const char* labels_path, gnnb_dataset** out) {
  if (auto s = require(edges_path && features_path && labels_path && out, "paths/out")) return s;
  return guard([&] {
    *out = new gnnb_dataset{load_dataset(edges_path, features_path, labels_path)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_dataset_load_dir(const char* dir, gnnb_dataset** out) {
  if (auto s = require(dir && out, "dir/out")) return s;
  return guard([&] {
    *out = new gnnb_dataset{load_dataset_dir(dir)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_dataset_karate(gnnb_dataset** out) {
  if (auto s = require(out != nullptr, "out")) return s;
  return guard([&] {
    *out = new gnnb_dataset{karate_club()};
    return GNNB_OK;
  });
}

gnnb_status gnnb_dataset_sbm(int64_t n, int32_t blocks, double p_in, double p_out,
                             int64_t feature_dim, uint64_t seed, gnnb_dataset** out) {
  if (auto s = require(out != nullptr, "out")) return s;
  return guard([&] {
    *out = new gnnb_dataset{sbm_generate(n, blocks, p_in, p_out, feature_dim, seed)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_dataset_save(const gnnb_dataset* ds, const char* dir) {
  if (auto s = require(ds && dir, "ds/dir")) return s;
  return guard([&] {
    save_dataset(ds->g, dir);
    return GNNB_OK;
  });
}

gnnb_status gnnb_dataset_stats(const gnnb_dataset* ds, int64_t* n, int64_t* undirected_edges,
                               int64_t* directed_arcs, int64_t* feature_dim,
                               int32_t* num_classes) {
  if (auto s = require(ds != nullptr, "ds")) return s;
  if (n) *n = ds->g.n;
  if (undirected_edges) *undirected_edges = static_cast<int64_t>(ds->g.edges.size());
  if (directed_arcs) *directed_arcs = 2 * static_cast<int64_t>(ds->g.edges.size());
  if (feature_dim) *feature_dim = ds->g.feature_dim();
  if (num_classes) *num_classes = ds->g.num_classes;
  return GNNB_OK;
}

void gnnb_dataset_free(gnnb_dataset* ds) { delete ds; }

// ---- configs ----------------------------------------------------------------

gnnb_status gnnb_config_parse_file(const char* path, gnnb_config** out) {
  if (auto s = require(path && out, "path/out")) return s;
  return guard([&] {
    *out = new gnnb_config{TrustConfig::parse_file(path)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_config_parse_string(const char* text, gnnb_config** out) {
  if (auto s = require(text && out, "text/out")) return s;
  return guard([&] {
    *out = new gnnb_config{TrustConfig::parse_string(text)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_config_canonical(const gnnb_config* cfg, char** text_out) {
  if (auto s = require(cfg && text_out, "cfg/text_out")) return s;
  return guard([&] {
    *text_out = dup_string(cfg->cfg.canonical_text());
    return GNNB_OK;
  });
}

gnnb_status gnnb_config_hash(const gnnb_config* cfg, char hash_out[65]) {
  if (auto s = require(cfg && hash_out, "cfg/hash_out")) return s;
  return guard([&] {
    const std::string h = cfg->cfg.hash();
    std::memcpy(hash_out, h.c_str(), h.size() + 1);
    return GNNB_OK;
  });
}

void gnnb_config_free(gnnb_config* cfg) { delete cfg; }

// ---- pipeline -----------------------------------------------------------------

gnnb_status gnnb_run_pipeline(const gnnb_config* cfg, uint64_t seed, gnnb_run_result** out) {
  if (auto s = require(cfg && out, "cfg/out")) return s;
  return guard([&] {
    GraphDataset ds = dataset_from_config(cfg->cfg);
    RunPlan plan = plan_from_config(cfg->cfg, seed);
    plan.model_spec = model_spec_from_config(cfg->cfg, ds);
    auto [train_mask, test_mask] = split_masks(ds.n, plan.train.train_fraction, seed);
    ds.train_mask = std::move(train_mask);
    ds.test_mask = std::move(test_mask);
    RunResult res = train_and_evaluate(ds, plan);
    res.metrics.config_hash = cfg->cfg.hash();
    *out = new gnnb_run_result{std::move(res)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_run_result_test_accuracy(const gnnb_run_result* res, double* out) {
  if (auto s = require(res && out, "res/out")) return s;
  *out = res->res.metrics.test_acc;
  return GNNB_OK;
}

gnnb_status gnnb_run_result_metrics_csv(const gnnb_run_result* res, char** out) {
  if (auto s = require(res && out, "res/out")) return s;
  return guard([&] {
    *out = dup_string(res->res.metrics.to_csv());
    return GNNB_OK;
  });
}

gnnb_status gnnb_run_result_trace(const gnnb_run_result* res, char** out) {
  if (auto s = require(res && out, "res/out")) return s;
  return guard([&] {
    *out = dup_string(res->res.trace.to_string());
    return GNNB_OK;
  });
}

gnnb_status gnnb_run_result_save_model(const gnnb_run_result* res, const char* path) {
  if (auto s = require(res && path, "res/path")) return s;
  return guard([&] {
    save_model(res->res.model, path);
    return GNNB_OK;
  });
}

void gnnb_run_result_free(gnnb_run_result* res) { delete res; }

// ---- grid ------------------------------------------------------------------------

gnnb_status gnnb_run_grid(const gnnb_config* cfg, const char* out_dir, int jobs, int force,
                          int64_t repeats_override, char** markdown_out) {
  if (auto s = require(cfg && out_dir, "cfg/out_dir")) return s;
  return guard([&] {
    RunGridOptions opts;
    opts.jobs = jobs;
    opts.force = force != 0;
    if (repeats_override > 0) opts.repeats = repeats_override;
    GridOutcome outcome = run_grid(cfg->cfg, out_dir, opts);
    if (markdown_out) {
      std::string md;
      for (const auto& table : summarize(outcome.records)) {
        md += emit_table(table, "markdown");
        md += "\n";
      }
      *markdown_out = dup_string(md);
    }
    if (outcome.failed > 0)
      return fail(GNNB_ERR_RUNTIME,
                  std::to_string(outcome.failed) + " grid run(s) failed; see stderr");
    return GNNB_OK;
  });
}

gnnb_status gnnb_load_records(const char* out_dir, gnnb_records** out) {
  if (auto s = require(out_dir && out, "out_dir/out")) return s;
  return guard([&] {
    *out = new gnnb_records{load_records(out_dir)};
    return GNNB_OK;
  });
}

gnnb_status gnnb_records_count(const gnnb_records* recs, int64_t* out) {
  if (auto s = require(recs && out, "recs/out")) return s;
  *out = static_cast<int64_t>(recs->records.size());
  return GNNB_OK;
}

gnnb_status gnnb_records_tables(const gnnb_records* recs, const char* format, char** out) {
  if (auto s = require(recs && format && out, "recs/format/out")) return s;
  return guard([&] {
    std::string text;
    bool first = true;
    for (const auto& table : summarize(recs->records)) {
      std::string t = emit_table(table, format);
      if (std::string(format) == "csv" && !first) {
        t = t.substr(t.find('\n') + 1);  // keep a single csv header
      }
      text += t;
      if (std::string(format) != "csv") text += "\n";
      first = false;
    }
    *out = dup_string(text);
    return GNNB_OK;
  });
}

void gnnb_records_free(gnnb_records* recs) { delete recs; }

// ---- single attack ------------------------------------------------------------------

gnnb_status gnnb_attack(const gnnb_config* cfg, const char* out_dir) {
  if (auto s = require(cfg && out_dir, "cfg/out_dir")) return s;
  return guard([&] {
    const TrustConfig& c = cfg->cfg;
    const std::string id = c.get_str("run.attack");
    const uint64_t seed = static_cast<uint64_t>(c.get_int("run.seed", 1));

    GraphDataset ds = dataset_from_config(c);
    auto [train_mask, test_mask] =
        split_masks(ds.n, c.get_double("train.train_fraction", 0.8), seed);
    ds.train_mask = std::move(train_mask);
    ds.test_mask = std::move(test_mask);

    GraphDataset result = ds;
    if (id == "random_poison" || id == "clga" || id == "qattack") {
      if (id == "random_poison") {
        result = random_poison(ds, c.get_double("attack.random_poison.remove_fraction", 0.1),
                               seed);
      } else if (id == "clga") {
        ClgaConfig cc;
        cc.budget_edges = c.get_int("attack.clga.budget_edges", 0);
        cc.num_hidden = c.get_int("attack.clga.num_hidden", 256);
        cc.num_proj_hidden = c.get_int("attack.clga.num_proj_hidden", 32);
        cc.tau = c.get_double("attack.clga.tau", 0.4);
        cc.drop_edge_rate_1 = c.get_double("attack.clga.drop_edge_rate_1", 0.3);
        cc.drop_edge_rate_2 = c.get_double("attack.clga.drop_edge_rate_2", 0.4);
        cc.drop_feature_rate_1 = c.get_double("attack.clga.drop_feature_rate_1", 0.1);
        cc.drop_feature_rate_2 = c.get_double("attack.clga.drop_feature_rate_2", 0.0);
        cc.epochs = c.get_int("attack.clga.epochs", 3000);
        cc.refresh_epochs = c.get_int("attack.clga.refresh_epochs", 10);
        cc.weight_decay = c.get_double("attack.clga.weight_decay", 1e-5);
        cc.learning_rate = c.get_double("attack.clga.learning_rate", 0.01);
        cc.drop_scheme = c.get_str("attack.clga.drop_scheme", "degree");
        cc.activation = c.get_str("attack.clga.activation", "prelu");
        cc.seed = seed;
        result = clga(ds, cc);
      } else {
        QAttackConfig qc;
        qc.population_size = c.get_int("attack.qattack.population_size", 20);
        qc.generations = c.get_int("attack.qattack.generations", 50);
        qc.rewiring_budget = c.get_int("attack.qattack.rewiring_budget", 10);
        qc.mutation_rate = c.get_double("attack.qattack.mutation_rate", 0.1);
        qc.elite_fraction = c.get_double("attack.qattack.elite_fraction", 0.2);
        qc.seed = seed;
        result = qattack(ds, ds.labels, qc);
      }
    } else if (id == "fgsm" || id == "pgd" || id == "pgd_structure") {
      // evasion attacks need a trained model first
      RunPlan plan = plan_from_config(c, seed);
      plan.model_spec = model_spec_from_config(c, ds);
      RunResult trained = train_and_evaluate(ds, plan);
      GraphOps gops = GraphOps::from(ds);
      if (id == "fgsm") {
        Tensor xp = fgsm(trained.model, gops, ds.features, ds.labels, ds.test_mask,
                         c.get_double("attack.fgsm.epsilon", 0.01));
        result = ds.with_features(xp);
      } else if (id == "pgd") {
        EvasionConfig ec;
        ec.epsilon = c.get_double("attack.pgd.epsilon", 0.005);
        ec.num_iterations = c.get_int("attack.pgd.num_iterations", 10);
        ec.alpha = c.get_double("attack.pgd.alpha", 0.0005);
        Tensor xp = pgd_features(trained.model, gops, ds.features, ds.labels, ds.test_mask, ec);
        result = ds.with_features(xp);
      } else {
        EvasionConfig ec;
        ec.num_iterations = c.get_int("attack.pgd_structure.num_iterations", 50);
        ec.alpha = c.get_double("attack.pgd_structure.alpha", 0.1);
        ec.num_samples = c.get_int("attack.pgd_structure.num_samples", 20);
        ec.seed = seed;
        auto res = pgd_structure(trained.model, ds, ds.test_mask,
                                 c.get_int("attack.pgd_structure.budget", 10), ec);
        result = ds.with_edges(res.edges);
      }
    } else {
      throw std::invalid_argument("unknown attack '" + id + "'");
    }
    save_dataset(result, out_dir, seed);
    return GNNB_OK;
  });
}

// ---- explain ---------------------------------------------------------------------------

gnnb_status gnnb_explain(const char* model_path, const char* dataset_dir, int64_t node,
                         const char* method, const char* out_path, double* fidelity_out) {
  if (auto s = require(model_path && dataset_dir && method && out_path, "args")) return s;
  return guard([&] {
    BlockModel model = load_model(model_path);
    GraphDataset ds = load_dataset_dir(dataset_dir);
    Explanation expl;
    const std::string m = method;
    if (m == "gnn") {
      GnnExplainConfig cfg;
      expl = gnn_explain(model, ds, node, cfg);
    } else if (m == "zorro") {
      ZorroConfig cfg;
      expl = zorro(model, ds, node, cfg);
    } else {
      throw std::invalid_argument("unknown explain method '" + m + "' (use gnn|zorro)");
    }
    save_explanation(expl, out_path);
    if (fidelity_out) *fidelity_out = expl.fidelity_value;
    return GNNB_OK;
  });
}

// ---- gradcheck -------------------------------------------------------------------------

gnnb_status gnnb_gradcheck(uint64_t seed, int instances_per_op, char** report_out,
                           int* all_passed) {
  return guard([&] {
    GradCheckReport report = run_gradcheck(seed, instances_per_op > 0 ? instances_per_op : 100);
    if (report_out) *report_out = dup_string(report.to_string());
    if (all_passed) *all_passed = report.all_passed() ? 1 : 0;
    return GNNB_OK;
  });
}

}  // extern "C"
