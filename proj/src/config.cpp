#include "assoc/config.h"

#include <cmath>
#include <fstream>
#include <set>

namespace assoc {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_range(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config " + key + ": " + what);
}

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

ordered_json synthetic_to_json(const SyntheticSpec& s) {
  ordered_json j;
  j["classes"] = s.classes;
  j["dim"] = s.dim;
  j["spread"] = s.spread;
  j["train_per_class"] = s.train_per_class;
  j["test_per_class"] = s.test_per_class;
  j["rotate_deg"] = s.rotate_deg;
  j["seed"] = s.seed;
  return j;
}

ordered_json idx_to_json(const IdxPaths& p) {
  ordered_json j;
  j["train_images"] = p.train_images;
  j["train_labels"] = p.train_labels;
  j["test_images"] = p.test_images;
  j["test_labels"] = p.test_labels;
  return j;
}

SyntheticSpec synthetic_from_json(const ordered_json& j, const std::string& prefix) {
  SyntheticSpec s;
  s.classes = j.at("classes").get<int>();
  s.dim = j.at("dim").get<int>();
  s.spread = j.at("spread").get<double>();
  s.train_per_class = j.at("train_per_class").get<int>();
  s.test_per_class = j.at("test_per_class").get<int>();
  s.rotate_deg = j.at("rotate_deg").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  check_range(s.classes >= 2, join_key(prefix, "classes"), "need at least 2 classes");
  check_range(s.dim >= 1, join_key(prefix, "dim"), "need at least 1 dimension");
  check_range(s.spread >= 0 && std::isfinite(s.spread), join_key(prefix, "spread"),
              "must be finite and >= 0");
  check_range(s.train_per_class >= 1, join_key(prefix, "train_per_class"), "must be >= 1");
  check_range(s.test_per_class >= 1, join_key(prefix, "test_per_class"), "must be >= 1");
  return s;
}

IdxPaths idx_from_json(const ordered_json& j) {
  IdxPaths p;
  p.train_images = j.at("train_images").get<std::string>();
  p.train_labels = j.at("train_labels").get<std::string>();
  p.test_images = j.at("test_images").get<std::string>();
  p.test_labels = j.at("test_labels").get<std::string>();
  return p;
}

}  // namespace

ordered_json config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["model"]["arch"] = cfg.model.arch;
  j["model"]["num_classes"] = cfg.model.num_classes;

  j["data"]["source"] = cfg.data.source;
  j["data"]["synthetic"] = synthetic_to_json(cfg.data.synthetic);
  j["data"]["idx"] = idx_to_json(cfg.data.idx);
  j["data"]["augment"]["enabled"] = cfg.data.augment.enabled;
  j["data"]["augment"]["max_shift"] = cfg.data.augment.max_shift;
  j["data"]["augment"]["max_rotate_deg"] = cfg.data.augment.max_rotate_deg;
  j["data"]["augment"]["noise_sigma"] = cfg.data.augment.noise_sigma;

  j["sampler"]["labeled_per_class"] = cfg.sampler.labeled_per_class;
  j["sampler"]["unlabeled_batch"] = cfg.sampler.unlabeled_batch;
  j["sampler"]["labeled_pool_size"] = cfg.sampler.labeled_pool_size;
  j["sampler"]["unlabeled_pool_size"] = cfg.sampler.unlabeled_pool_size;
  j["sampler"]["unlabeled_source"] = cfg.sampler.unlabeled_source;
  j["sampler"]["queue_capacity"] = cfg.sampler.queue_capacity;

  j["loss"]["walker"] = cfg.loss.walker;
  j["loss"]["visit"] = cfg.loss.visit;
  j["loss"]["classification"] = cfg.loss.classification;

  j["optim"]["lr"] = cfg.optim.lr;
  j["optim"]["beta1"] = cfg.optim.beta1;
  j["optim"]["beta2"] = cfg.optim.beta2;
  j["optim"]["eps"] = cfg.optim.eps;
  j["optim"]["lr_decay"] = cfg.optim.lr_decay;

  j["train"]["mode"] = cfg.train.mode;
  j["train"]["max_steps"] = cfg.train.max_steps;
  j["train"]["eval_every"] = cfg.train.eval_every;
  j["train"]["seed"] = cfg.train.seed;
  j["train"]["num_seeds"] = cfg.train.num_seeds;
  j["train"]["precision"] = cfg.train.precision;
  j["train"]["out_dir"] = cfg.train.out_dir;
  j["train"]["checkpoint_every"] = cfg.train.checkpoint_every;
  j["train"]["assoc_dump_steps"] = cfg.train.assoc_dump_steps;

  j["adapt"]["source_steps"] = cfg.adapt.source_steps;
  j["adapt"]["visit_weight"] = cfg.adapt.visit_weight;
  j["adapt"]["run_target_baseline"] = cfg.adapt.run_target_baseline;
  j["adapt"]["target"]["source"] = cfg.adapt.target.source;
  j["adapt"]["target"]["synthetic"] = synthetic_to_json(cfg.adapt.target.synthetic);
  j["adapt"]["target"]["idx"] = idx_to_json(cfg.adapt.target.idx);

  j["eval"]["checkpoint"] = cfg.eval.checkpoint;

  j["nn"]["checkpoint"] = cfg.nn.checkpoint;
  j["nn"]["k"] = cfg.nn.k;
  j["nn"]["max_queries"] = cfg.nn.max_queries;
  return j;
}

RunConfig config_from_json(const ordered_json& j) {
  RunConfig cfg;
  try {
    cfg.model.arch = j.at("model").at("arch").get<std::string>();
    cfg.model.num_classes = j.at("model").at("num_classes").get<int>();

    const auto& data = j.at("data");
    cfg.data.source = data.at("source").get<std::string>();
    cfg.data.synthetic = synthetic_from_json(data.at("synthetic"), "data.synthetic");
    cfg.data.idx = idx_from_json(data.at("idx"));
    cfg.data.augment.enabled = data.at("augment").at("enabled").get<bool>();
    cfg.data.augment.max_shift = data.at("augment").at("max_shift").get<int>();
    cfg.data.augment.max_rotate_deg = data.at("augment").at("max_rotate_deg").get<double>();
    cfg.data.augment.noise_sigma = data.at("augment").at("noise_sigma").get<double>();

    const auto& sampler = j.at("sampler");
    cfg.sampler.labeled_per_class = sampler.at("labeled_per_class").get<int>();
    cfg.sampler.unlabeled_batch = sampler.at("unlabeled_batch").get<int>();
    cfg.sampler.labeled_pool_size = sampler.at("labeled_pool_size").get<long long>();
    cfg.sampler.unlabeled_pool_size = sampler.at("unlabeled_pool_size").get<long long>();
    cfg.sampler.unlabeled_source = sampler.at("unlabeled_source").get<std::string>();
    cfg.sampler.queue_capacity = sampler.at("queue_capacity").get<int>();

    cfg.loss.walker = j.at("loss").at("walker").get<double>();
    cfg.loss.visit = j.at("loss").at("visit").get<double>();
    cfg.loss.classification = j.at("loss").at("classification").get<double>();

    const auto& optim = j.at("optim");
    cfg.optim.lr = optim.at("lr").get<double>();
    cfg.optim.beta1 = optim.at("beta1").get<double>();
    cfg.optim.beta2 = optim.at("beta2").get<double>();
    cfg.optim.eps = optim.at("eps").get<double>();
    cfg.optim.lr_decay = optim.at("lr_decay").get<double>();

    const auto& train = j.at("train");
    cfg.train.mode = train.at("mode").get<std::string>();
    cfg.train.max_steps = train.at("max_steps").get<long long>();
    cfg.train.eval_every = train.at("eval_every").get<long long>();
    cfg.train.seed = train.at("seed").get<std::uint64_t>();
    cfg.train.num_seeds = train.at("num_seeds").get<int>();
    cfg.train.precision = train.at("precision").get<std::string>();
    cfg.train.out_dir = train.at("out_dir").get<std::string>();
    cfg.train.checkpoint_every = train.at("checkpoint_every").get<long long>();
    cfg.train.assoc_dump_steps = train.at("assoc_dump_steps").get<std::vector<long long>>();

    const auto& adapt = j.at("adapt");
    cfg.adapt.source_steps = adapt.at("source_steps").get<long long>();
    cfg.adapt.visit_weight = adapt.at("visit_weight").get<double>();
    cfg.adapt.run_target_baseline = adapt.at("run_target_baseline").get<bool>();
    cfg.adapt.target.source = adapt.at("target").at("source").get<std::string>();
    cfg.adapt.target.synthetic =
        synthetic_from_json(adapt.at("target").at("synthetic"), "adapt.target.synthetic");
    cfg.adapt.target.idx = idx_from_json(adapt.at("target").at("idx"));

    cfg.eval.checkpoint = j.at("eval").at("checkpoint").get<std::string>();

    cfg.nn.checkpoint = j.at("nn").at("checkpoint").get<std::string>();
    cfg.nn.k = j.at("nn").at("k").get<int>();
    cfg.nn.max_queries = j.at("nn").at("max_queries").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  check_range(cfg.model.num_classes >= 2, "model.num_classes", "must be >= 2");
  check_range(cfg.data.source == "synthetic" || cfg.data.source == "idx", "data.source",
              "must be 'synthetic' or 'idx'");
  check_range(cfg.data.augment.max_shift >= 0, "data.augment.max_shift", "must be >= 0");
  check_range(cfg.data.augment.max_rotate_deg >= 0, "data.augment.max_rotate_deg",
              "must be >= 0");
  check_range(cfg.data.augment.noise_sigma >= 0, "data.augment.noise_sigma", "must be >= 0");
  check_range(cfg.sampler.labeled_per_class >= 1, "sampler.labeled_per_class", "must be >= 1");
  check_range(cfg.sampler.unlabeled_batch >= 1, "sampler.unlabeled_batch", "must be >= 1");
  check_range(cfg.sampler.labeled_pool_size >= -1, "sampler.labeled_pool_size",
              "must be -1 (all) or >= 0");
  check_range(cfg.sampler.unlabeled_pool_size != 0, "sampler.unlabeled_pool_size",
              "0 is not a run mode; use train.mode=supervised instead");
  check_range(cfg.sampler.unlabeled_source == "corpus" ||
                  cfg.sampler.unlabeled_source == "labeled_pool",
              "sampler.unlabeled_source", "must be 'corpus' or 'labeled_pool'");
  check_range(cfg.sampler.queue_capacity >= 0, "sampler.queue_capacity", "must be >= 0");
  check_range(cfg.loss.walker >= 0 && std::isfinite(cfg.loss.walker), "loss.walker",
              "must be finite and >= 0");
  check_range(cfg.loss.visit >= 0 && std::isfinite(cfg.loss.visit), "loss.visit",
              "must be finite and >= 0");
  check_range(cfg.loss.classification >= 0 && std::isfinite(cfg.loss.classification),
              "loss.classification", "must be finite and >= 0");
  check_range(cfg.optim.lr > 0 && std::isfinite(cfg.optim.lr), "optim.lr", "must be > 0");
  check_range(cfg.optim.beta1 >= 0 && cfg.optim.beta1 < 1, "optim.beta1", "must be in [0,1)");
  check_range(cfg.optim.beta2 >= 0 && cfg.optim.beta2 < 1, "optim.beta2", "must be in [0,1)");
  check_range(cfg.optim.eps > 0, "optim.eps", "must be > 0");
  check_range(cfg.optim.lr_decay > 0 && cfg.optim.lr_decay <= 1, "optim.lr_decay",
              "must be in (0,1]");
  check_range(cfg.train.mode == "semisup" || cfg.train.mode == "supervised" ||
                  cfg.train.mode == "adapt",
              "train.mode", "must be 'semisup', 'supervised' or 'adapt'");
  check_range(cfg.train.max_steps >= 1, "train.max_steps", "must be >= 1");
  check_range(cfg.train.eval_every >= 0, "train.eval_every", "must be >= 0");
  check_range(cfg.train.num_seeds >= 1, "train.num_seeds", "must be >= 1");
  check_range(cfg.train.precision == "f32" || cfg.train.precision == "f64", "train.precision",
              "must be 'f32' or 'f64'");
  check_range(!cfg.train.out_dir.empty(), "train.out_dir", "must not be empty");
  check_range(cfg.train.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0");
  for (long long s : cfg.train.assoc_dump_steps)
    check_range(s >= 1, "train.assoc_dump_steps", "steps must be >= 1");
  check_range(cfg.adapt.source_steps >= 1, "adapt.source_steps", "must be >= 1");
  check_range(cfg.adapt.visit_weight >= 0 && std::isfinite(cfg.adapt.visit_weight),
              "adapt.visit_weight", "must be finite and >= 0");
  check_range(cfg.adapt.target.source == "synthetic" || cfg.adapt.target.source == "idx",
              "adapt.target.source", "must be 'synthetic' or 'idx'");
  check_range(cfg.nn.k >= 1, "nn.k", "must be >= 1");
  check_range(cfg.nn.max_queries >= 0, "nn.max_queries", "must be >= 0");
  return cfg;
}

ordered_json merge_config_json(const ordered_json& base, const nlohmann::json& overlay) {
  // recursive merge with the defaults as the schema
  struct Merger {
    static void apply(ordered_json& dst, const nlohmann::json& src, const std::string& prefix) {
      if (!src.is_object())
        throw ConfigError("config " + (prefix.empty() ? std::string("document") : prefix) +
                          ": expected an object");
      for (const auto& [key, value] : src.items()) {
        std::string at = join_key(prefix, key);
        if (!dst.contains(key)) throw ConfigError("unknown config key '" + at + "'");
        ordered_json& slot = dst[key];
        if (slot.is_object()) {
          apply(slot, value, at);
        } else if (slot.is_array()) {
          if (!value.is_array()) throw ConfigError("config " + at + ": expected an array");
          slot = value;
        } else if (slot.is_string()) {
          if (!value.is_string()) throw ConfigError("config " + at + ": expected a string");
          slot = value;
        } else if (slot.is_boolean()) {
          if (!value.is_boolean()) throw ConfigError("config " + at + ": expected a boolean");
          slot = value;
        } else {  // number
          if (!value.is_number()) throw ConfigError("config " + at + ": expected a number");
          slot = value;
        }
      }
    }
  };
  ordered_json merged = base;
  Merger::apply(merged, overlay, "");
  return merged;
}

void apply_override(ordered_json& doc, const std::string& dotted_key, const std::string& value) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = dotted_key.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(dotted_key.substr(start));
      break;
    }
    parts.push_back(dotted_key.substr(start, dot - start));
    start = dot + 1;
  }
  ordered_json* slot = &doc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!slot->is_object() || !slot->contains(parts[i]))
      throw ConfigError("unknown config key '" + dotted_key + "'");
    slot = &(*slot)[parts[i]];
  }
  if (slot->is_object()) throw ConfigError("config key '" + dotted_key + "' is not a leaf");

  if (slot->is_string()) {  // raw strings need no quoting on the command line
    *slot = value;
    return;
  }
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded())
    throw ConfigError("config key '" + dotted_key + "': cannot parse value '" + value + "'");
  if (slot->is_boolean()) {
    if (!parsed.is_boolean())
      throw ConfigError("config key '" + dotted_key + "': expected a boolean, got '" + value +
                        "'");
  } else if (slot->is_array()) {
    if (!parsed.is_array())
      throw ConfigError("config key '" + dotted_key + "': expected an array, got '" + value +
                        "'");
  } else {
    if (!parsed.is_number())
      throw ConfigError("config key '" + dotted_key + "': expected a number, got '" + value +
                        "'");
  }
  *slot = parsed;
}

ordered_json load_config_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json file;
  try {
    file = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return merge_config_json(config_to_json(RunConfig{}), file);
}

}  // namespace assoc
