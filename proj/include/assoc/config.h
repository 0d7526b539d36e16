#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "assoc/association.h"
#include "assoc/data.h"
#include "assoc/optim.h"

namespace assoc {

struct SyntheticSpec {
  int classes = 4;
  int dim = 2;
  double spread = 0.25;
  int train_per_class = 250;
  int test_per_class = 250;
  double rotate_deg = 0;
  std::uint64_t seed = 7;
};

struct IdxPaths {
  std::string train_images, train_labels, test_images, test_labels;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  SyntheticSpec synthetic;
  IdxPaths idx;
  AugmentPolicy augment;
};

struct SamplerConfig {
  int labeled_per_class = 10;
  int unlabeled_batch = 100;
  long long labeled_pool_size = -1;    // -1: all labeled data
  long long unlabeled_pool_size = -1;  // -1: whole corpus; 0 is rejected
  std::string unlabeled_source = "corpus";  // corpus | labeled_pool
  int queue_capacity = 2;                   // 0: sample inline, no producer thread
};

struct ModelConfig {
  std::string arch = "FC(32)->FC(16)";
  int num_classes = 10;
};

struct TrainConfig {
  std::string mode = "semisup";  // semisup | supervised | adapt
  long long max_steps = 1000;
  long long eval_every = 100;  // 0: evaluate only at the end
  std::uint64_t seed = 1;
  int num_seeds = 1;  // runs seeds seed, seed+1, ...
  std::string precision = "f32";  // f32 | f64
  std::string out_dir = "runs/out";
  long long checkpoint_every = 0;  // 0: only the final checkpoint
  std::vector<long long> assoc_dump_steps;
};

struct TargetConfig {
  std::string source = "synthetic";
  SyntheticSpec synthetic;
  IdxPaths idx;
};

struct AdaptConfig {
  long long source_steps = 1000;  // phase-1 length; phase 2 runs train.max_steps
  double visit_weight = 0.5;      // visit weight during phase 2
  bool run_target_baseline = false;
  TargetConfig target;
};

struct EvalConfig {
  std::string checkpoint;  // empty: <out_dir>/checkpoint_final.ckpt
};

struct NnConfig {
  std::string checkpoint;
  int k = 5;
  long long max_queries = 64;  // 0: embed every test sample
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  SamplerConfig sampler;
  LossWeights loss;
  AdamConfig optim;
  TrainConfig train;
  AdaptConfig adapt;
  EvalConfig eval;
  NnConfig nn;
};

// full default document; every known key appears here
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

// validates types and value ranges; error messages name the offending key
RunConfig config_from_json(const nlohmann::ordered_json& doc);

// overlays onto the defaults; unknown keys and type mismatches are rejected
nlohmann::ordered_json merge_config_json(const nlohmann::ordered_json& base,
                                         const nlohmann::json& overlay);

// applies "a.b.c=value" style overrides onto a merged document
void apply_override(nlohmann::ordered_json& doc, const std::string& dotted_key,
                    const std::string& value);

// defaults + file contents; the returned doc is ready for apply_override
nlohmann::ordered_json load_config_doc(const std::string& path);

}  // namespace assoc
