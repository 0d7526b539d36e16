#ifndef ASSOC_C_API_H
#define ASSOC_C_API_H

/* C interface to the association-learning engine. All functions return
 * ASSOC_OK on success; on failure they return an error code and leave a
 * message retrievable through assoc_last_error() (thread-local). */

#ifdef __cplusplus
extern "C" {
#endif

#define ASSOC_OK 0
#define ASSOC_ERR_CONFIG 1  /* bad config or bad arguments */
#define ASSOC_ERR_RUNTIME 2 /* failures while running (I/O, numerics, ...) */

typedef struct assoc_config assoc_config;

typedef struct assoc_train_stats {
  long long num_seeds;
  double median_min_error_percent;
  double stddev_min_error_percent;
  double wall_time_s;
} assoc_train_stats;

typedef struct assoc_eval_stats {
  double error_percent;
  long long samples;
} assoc_eval_stats;

typedef struct assoc_adapt_stats {
  double source_only_error_percent;
  double adapted_error_percent;
  double target_only_error_percent; /* -1 when the baseline is disabled */
  double gap_coverage_percent;      /* NaN when the baseline is disabled */
  double wall_time_s;
} assoc_adapt_stats;

const char* assoc_version(void);

/* message from the most recent failing call on this thread */
const char* assoc_last_error(void);

/* fresh config holding the built-in defaults */
int assoc_config_create(assoc_config** out);

/* defaults overlaid with a JSON file; unknown keys are rejected */
int assoc_config_load(const char* path, assoc_config** out);

/* dotted-path override, e.g. assoc_config_set(c, "optim.lr", "0.001") */
int assoc_config_set(assoc_config* cfg, const char* dotted_key, const char* value);

/* serialized config; free the string with assoc_free */
int assoc_config_dump(const assoc_config* cfg, char** json_out);

void assoc_config_destroy(assoc_config* cfg);
void assoc_free(char* p);

/* training run (mode semisup or supervised); artifacts land in train.out_dir.
   stats pointers below may be NULL when only the artifacts are wanted */
int assoc_train(const assoc_config* cfg, assoc_train_stats* out);

/* scores a checkpoint against the configured test split */
int assoc_evaluate(const assoc_config* cfg, assoc_eval_stats* out);

/* two-phase domain adaptation */
int assoc_adapt(const assoc_config* cfg, assoc_adapt_stats* out);

/* one training run per visit weight; writes <out_dir>/sweep_visit.csv */
int assoc_sweep_visit(const assoc_config* cfg, const double* weights, int count, int parallel);

/* writes the association tensors for one batch pair under <out_dir>/assoc/ */
int assoc_dump_associations(const assoc_config* cfg);

/* writes cosine nearest neighbors to <out_dir>/nn.csv */
int assoc_nearest_neighbors(const assoc_config* cfg);

#ifdef __cplusplus
}
#endif

#endif /* ASSOC_C_API_H */
