#include "assoc/c_api.h"

#include <cstring>
#include <string>

#include "assoc/config.h"
#include "assoc/trainer.h"

struct assoc_config {
  nlohmann::ordered_json doc;  // defaults + file + overrides, always complete
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// config problems report ASSOC_ERR_CONFIG, everything else ASSOC_ERR_RUNTIME
template <typename F>
int guarded(F&& f) {
  try {
    f();
    return ASSOC_OK;
  } catch (const assoc::ConfigError& e) {
    return fail(ASSOC_ERR_CONFIG, e.what());
  } catch (const assoc::ParseError& e) {
    return fail(ASSOC_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(ASSOC_ERR_RUNTIME, e.what());
  }
}

int require(bool ok, const char* what) {
  return ok ? ASSOC_OK : fail(ASSOC_ERR_CONFIG, std::string("null argument: ") + what);
}

assoc::RunConfig parse(const assoc_config* cfg) { return assoc::config_from_json(cfg->doc); }

}  // namespace

extern "C" {

const char* assoc_version(void) { return "0.1.0"; }

const char* assoc_last_error(void) { return g_last_error.c_str(); }

int assoc_config_create(assoc_config** out) {
  if (int rc = require(out, "out")) return rc;
  return guarded([&] { *out = new assoc_config{assoc::config_to_json(assoc::RunConfig{})}; });
}

int assoc_config_load(const char* path, assoc_config** out) {
  if (int rc = require(path, "path")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] { *out = new assoc_config{assoc::load_config_doc(path)}; });
}

int assoc_config_set(assoc_config* cfg, const char* dotted_key, const char* value) {
  if (int rc = require(cfg, "cfg")) return rc;
  if (int rc = require(dotted_key, "dotted_key")) return rc;
  if (int rc = require(value, "value")) return rc;
  return guarded([&] { assoc::apply_override(cfg->doc, dotted_key, value); });
}

int assoc_config_dump(const assoc_config* cfg, char** json_out) {
  if (int rc = require(cfg, "cfg")) return rc;
  if (int rc = require(json_out, "json_out")) return rc;
  return guarded([&] {
    std::string s = cfg->doc.dump(2);
    *json_out = new char[s.size() + 1];
    std::memcpy(*json_out, s.c_str(), s.size() + 1);
  });
}

void assoc_config_destroy(assoc_config* cfg) { delete cfg; }

void assoc_free(char* p) { delete[] p; }

int assoc_train(const assoc_config* cfg, assoc_train_stats* out) {
  if (int rc = require(cfg, "cfg")) return rc;
  return guarded([&] {
    assoc::TrainOutcome o = assoc::train_run(parse(cfg));
    if (out) {
      out->num_seeds = static_cast<long long>(o.runs.size());
      out->median_min_error_percent = o.median_min_error;
      out->stddev_min_error_percent = o.stddev_min_error;
      out->wall_time_s = o.wall_time_s;
    }
  });
}

int assoc_evaluate(const assoc_config* cfg, assoc_eval_stats* out) {
  if (int rc = require(cfg, "cfg")) return rc;
  return guarded([&] {
    assoc::EvalOutcome o = assoc::evaluate_run(parse(cfg));
    if (out) {
      out->error_percent = o.error_percent;
      out->samples = static_cast<long long>(o.samples);
    }
  });
}

int assoc_adapt(const assoc_config* cfg, assoc_adapt_stats* out) {
  if (int rc = require(cfg, "cfg")) return rc;
  return guarded([&] {
    assoc::AdaptOutcome o = assoc::adapt_run(parse(cfg));
    if (out) {
      out->source_only_error_percent = o.median_source_only;
      out->adapted_error_percent = o.median_adapted;
      out->target_only_error_percent = o.median_target_only;
      out->gap_coverage_percent = o.median_gap_coverage;
      out->wall_time_s = o.wall_time_s;
    }
  });
}

int assoc_sweep_visit(const assoc_config* cfg, const double* weights, int count, int parallel) {
  if (int rc = require(cfg, "cfg")) return rc;
  if (int rc = require(weights, "weights")) return rc;
  if (count < 1) return fail(ASSOC_ERR_CONFIG, "sweep: count must be >= 1");
  return guarded([&] {
    assoc::sweep_visit_run(parse(cfg), std::vector<double>(weights, weights + count), parallel);
  });
}

int assoc_dump_associations(const assoc_config* cfg) {
  if (int rc = require(cfg, "cfg")) return rc;
  return guarded([&] { assoc::assoc_dump_run(parse(cfg)); });
}

int assoc_nearest_neighbors(const assoc_config* cfg) {
  if (int rc = require(cfg, "cfg")) return rc;
  return guarded([&] { assoc::nearest_neighbors_run(parse(cfg)); });
}

}  // extern "C"
