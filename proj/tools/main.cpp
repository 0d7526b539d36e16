#ifdef __linux__
#include <malloc.h>
#endif

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "assoc/c_api.h"

namespace {

struct ConfigDeleter {
  void operator()(assoc_config* c) const { assoc_config_destroy(c); }
};
using ConfigPtr = std::unique_ptr<assoc_config, ConfigDeleter>;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  long long seed = -1;
  bool have_seed = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file")->required();
  cmd->add_option("--set", args.sets, "override a config key, e.g. --set optim.lr=0.01")
      ->take_all();
  cmd->add_option("--out", args.out_dir, "output directory (overrides train.out_dir)");
  cmd->add_option("--seed", args.seed, "base seed (overrides train.seed)");
}

// exits through an exception-free error path: prints and returns the code
int usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return 1;
}

ConfigPtr build_config(const CommonArgs& args, int& rc) {
  assoc_config* raw = nullptr;
  if (assoc_config_load(args.config_path.c_str(), &raw) != ASSOC_OK) {
    rc = usage_error(assoc_last_error());
    return nullptr;
  }
  ConfigPtr cfg(raw);
  for (const std::string& kv : args.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      rc = usage_error("--set expects KEY=VALUE, got '" + kv + "'");
      return nullptr;
    }
    if (assoc_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) !=
        ASSOC_OK) {
      rc = usage_error(assoc_last_error());
      return nullptr;
    }
  }
  if (!args.out_dir.empty() &&
      assoc_config_set(cfg.get(), "train.out_dir", args.out_dir.c_str()) != ASSOC_OK) {
    rc = usage_error(assoc_last_error());
    return nullptr;
  }
  if (args.seed >= 0 &&
      assoc_config_set(cfg.get(), "train.seed", std::to_string(args.seed).c_str()) != ASSOC_OK) {
    rc = usage_error(assoc_last_error());
    return nullptr;
  }
  rc = 0;
  return cfg;
}

int report(int code) {
  if (code == ASSOC_OK) return 0;
  std::cerr << "error: " << assoc_last_error() << "\n";
  return code == ASSOC_ERR_CONFIG ? 1 : 2;
}

std::vector<double> parse_weights(const std::string& csv, int& rc) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      rc = usage_error("--weights expects a comma-separated list of numbers, got '" + tok + "'");
      return {};
    }
  }
  if (out.empty()) rc = usage_error("--weights is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __linux__
  // training churns through multi-MB tensors every step; keep freed blocks on
  // the heap instead of round-tripping through mmap/munmap
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"associative semi-supervised training engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", []() { return std::string(assoc_version()); });

  CommonArgs train_args, eval_args, adapt_args, sweep_args, dump_args, nn_args;
  std::string sweep_weights = "0,0.25,0.5,1";
  int sweep_parallel = 1;

  CLI::App* train = app.add_subcommand("train", "train a model (mode semisup or supervised)");
  add_common(train, train_args);
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval, eval_args);
  CLI::App* adapt = app.add_subcommand("adapt", "two-phase domain adaptation");
  add_common(adapt, adapt_args);
  CLI::App* sweep = app.add_subcommand("sweep-visit", "train once per visit-loss weight");
  add_common(sweep, sweep_args);
  sweep->add_option("--weights", sweep_weights, "comma-separated visit weights");
  sweep->add_option("--parallel", sweep_parallel, "worker threads for the sweep");
  CLI::App* dump = app.add_subcommand("assoc-dump", "write association tensors for one batch");
  add_common(dump, dump_args);
  CLI::App* nn = app.add_subcommand("nn", "write cosine nearest neighbors of test queries");
  add_common(nn, nn_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // --help exits 0
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage errors exit 1
  }

  int rc = 0;
  if (train->parsed()) {
    ConfigPtr cfg = build_config(train_args, rc);
    if (!cfg) return rc;
    assoc_train_stats stats{};
    if (int code = report(assoc_train(cfg.get(), &stats))) return code;
    std::printf("seeds: %lld\n", stats.num_seeds);
    std::printf("median min test error: %.4f%%\n", stats.median_min_error_percent);
    std::printf("stddev: %.4f\n", stats.stddev_min_error_percent);
    std::printf("wall time: %.1fs\n", stats.wall_time_s);
  } else if (eval->parsed()) {
    ConfigPtr cfg = build_config(eval_args, rc);
    if (!cfg) return rc;
    assoc_eval_stats stats{};
    if (int code = report(assoc_evaluate(cfg.get(), &stats))) return code;
    std::printf("test error: %.4f%% over %lld samples\n", stats.error_percent, stats.samples);
  } else if (adapt->parsed()) {
    ConfigPtr cfg = build_config(adapt_args, rc);
    if (!cfg) return rc;
    assoc_adapt_stats stats{};
    if (int code = report(assoc_adapt(cfg.get(), &stats))) return code;
    std::printf("source-only target error: %.4f%%\n", stats.source_only_error_percent);
    std::printf("adapted target error: %.4f%%\n", stats.adapted_error_percent);
    if (stats.target_only_error_percent >= 0) {
      std::printf("target-only baseline: %.4f%%\n", stats.target_only_error_percent);
      std::printf("gap coverage: %.1f%%\n", stats.gap_coverage_percent);
    }
  } else if (sweep->parsed()) {
    ConfigPtr cfg = build_config(sweep_args, rc);
    if (!cfg) return rc;
    std::vector<double> weights = parse_weights(sweep_weights, rc);
    if (weights.empty()) return rc;
    if (int code = report(assoc_sweep_visit(cfg.get(), weights.data(),
                                            static_cast<int>(weights.size()), sweep_parallel)))
      return code;
    std::string csv_path =
        (sweep_args.out_dir.empty() ? std::string("(train.out_dir)") : sweep_args.out_dir) +
        "/sweep_visit.csv";
    std::printf("sweep results written to %s\n", csv_path.c_str());
  } else if (dump->parsed()) {
    ConfigPtr cfg = build_config(dump_args, rc);
    if (!cfg) return rc;
    if (int code = report(assoc_dump_associations(cfg.get()))) return code;
    std::printf("association tensors written under the output directory\n");
  } else if (nn->parsed()) {
    ConfigPtr cfg = build_config(nn_args, rc);
    if (!cfg) return rc;
    if (int code = report(assoc_nearest_neighbors(cfg.get()))) return code;
    std::printf("nearest neighbors written to nn.csv\n");
  }
  return rc;
}
