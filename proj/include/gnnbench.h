/* gnnbench — graph neural network attack/defense/interpretation benchmark.
 *
 * C API over the core library: opaque handles, status codes, and
 * caller-freed strings. Every function returns GNNB_OK on success; on
 * failure gnnb_last_error() carries a thread-local description.
 */
#ifndef GNNBENCH_H
#define GNNBENCH_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gnnb_status {
  GNNB_OK = 0,
  GNNB_ERR_INVALID_ARGUMENT = 1,
  GNNB_ERR_IO = 2,
  GNNB_ERR_RUNTIME = 3
} gnnb_status;

typedef struct gnnb_dataset gnnb_dataset;
typedef struct gnnb_config gnnb_config;
typedef struct gnnb_run_result gnnb_run_result;
typedef struct gnnb_records gnnb_records;

const char* gnnb_version(void);
const char* gnnb_last_error(void);
void gnnb_string_free(char* s);

/* ---- datasets ---------------------------------------------------------- */

/* Text formats: edges `u<TAB>v`, features `id<TAB>v1,v2,...`, labels
 * `id<TAB>class`; `#` starts a comment line. */
gnnb_status gnnb_dataset_load(const char* edges_path, const char* features_path,
                              const char* labels_path, gnnb_dataset** out);
gnnb_status gnnb_dataset_load_dir(const char* dir, gnnb_dataset** out);
gnnb_status gnnb_dataset_karate(gnnb_dataset** out);
gnnb_status gnnb_dataset_sbm(int64_t n, int32_t blocks, double p_in, double p_out,
                             int64_t feature_dim, uint64_t seed, gnnb_dataset** out);
gnnb_status gnnb_dataset_save(const gnnb_dataset* ds, const char* dir);
gnnb_status gnnb_dataset_stats(const gnnb_dataset* ds, int64_t* n, int64_t* undirected_edges,
                               int64_t* directed_arcs, int64_t* feature_dim,
                               int32_t* num_classes);
void gnnb_dataset_free(gnnb_dataset* ds);

/* ---- configs ------------------------------------------------------------ */

/* INI-style: [section] headers, key = value, # comments. The hash is the
 * SHA-256 of the canonical text (sorted keys, comments stripped). */
gnnb_status gnnb_config_parse_file(const char* path, gnnb_config** out);
gnnb_status gnnb_config_parse_string(const char* text, gnnb_config** out);
gnnb_status gnnb_config_canonical(const gnnb_config* cfg, char** text_out);
gnnb_status gnnb_config_hash(const gnnb_config* cfg, char hash_out[65]);
void gnnb_config_free(gnnb_config* cfg);

/* ---- pipeline ------------------------------------------------------------ */

/* One seeded train/attack/defend/evaluate run of the configured cell. */
gnnb_status gnnb_run_pipeline(const gnnb_config* cfg, uint64_t seed, gnnb_run_result** out);
gnnb_status gnnb_run_result_test_accuracy(const gnnb_run_result* res, double* out);
gnnb_status gnnb_run_result_metrics_csv(const gnnb_run_result* res, char** out);
gnnb_status gnnb_run_result_trace(const gnnb_run_result* res, char** out);
gnnb_status gnnb_run_result_save_model(const gnnb_run_result* res, const char* path);
void gnnb_run_result_free(gnnb_run_result* res);

/* ---- experiment grid ------------------------------------------------------- */

/* Runs the configured grid into out_dir (one record directory per
 * config-hash/seed); existing records are reused unless force is nonzero.
 * markdown_out, when non-NULL, receives the summary tables. */
gnnb_status gnnb_run_grid(const gnnb_config* cfg, const char* out_dir, int jobs, int force,
                          int64_t repeats_override, char** markdown_out);
gnnb_status gnnb_load_records(const char* out_dir, gnnb_records** out);
gnnb_status gnnb_records_count(const gnnb_records* recs, int64_t* out);
/* format: "markdown" or "csv"; all tables concatenated. */
gnnb_status gnnb_records_tables(const gnnb_records* recs, const char* format, char** out);
void gnnb_records_free(gnnb_records* recs);

/* ---- single attack ----------------------------------------------------------- */

/* Applies the attack named by [run] attack = ... to the configured dataset
 * (training a model first when the attack needs one) and saves the
 * perturbed dataset into out_dir. */
gnnb_status gnnb_attack(const gnnb_config* cfg, const char* out_dir);

/* ---- interpretation ------------------------------------------------------------ */

/* method: "gnn" or "zorro". Writes the explanation file to out_path. */
gnnb_status gnnb_explain(const char* model_path, const char* dataset_dir, int64_t node,
                         const char* method, const char* out_path, double* fidelity_out);

/* ---- verification ---------------------------------------------------------------- */

/* Central finite-difference comparison for every differentiable op and the
 * bundled two-layer models. all_passed is 1 when every check met the
 * tolerance. */
gnnb_status gnnb_gradcheck(uint64_t seed, int instances_per_op, char** report_out,
                           int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* GNNBENCH_H */
