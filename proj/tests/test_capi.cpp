// exercises the shared library exactly as an external consumer would:
// only assoc/c_api.h, no internal headers
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <assoc/c_api.h>

#include <cstring>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Config {
  assoc_config* ptr = nullptr;
  Config() { REQUIRE(assoc_config_create(&ptr) == ASSOC_OK); }
  ~Config() { assoc_config_destroy(ptr); }
  int set(const char* k, const char* v) { return assoc_config_set(ptr, k, v); }
};

void make_tiny(Config& c, const std::string& out) {
  CHECK(c.set("model.arch", "FC(8)->FC(4)") == ASSOC_OK);
  CHECK(c.set("model.num_classes", "4") == ASSOC_OK);
  CHECK(c.set("data.synthetic.classes", "4") == ASSOC_OK);
  CHECK(c.set("data.synthetic.train_per_class", "60") == ASSOC_OK);
  CHECK(c.set("data.synthetic.test_per_class", "40") == ASSOC_OK);
  CHECK(c.set("data.synthetic.spread", "0.35") == ASSOC_OK);
  CHECK(c.set("sampler.labeled_per_class", "2") == ASSOC_OK);
  CHECK(c.set("sampler.labeled_pool_size", "8") == ASSOC_OK);
  CHECK(c.set("sampler.unlabeled_batch", "16") == ASSOC_OK);
  CHECK(c.set("train.max_steps", "30") == ASSOC_OK);
  CHECK(c.set("train.eval_every", "10") == ASSOC_OK);
  CHECK(c.set("train.out_dir", out.c_str()) == ASSOC_OK);
}

}  // namespace

TEST_CASE("version and error state") {
  REQUIRE(assoc_version() != nullptr);
  CHECK(std::strcmp(assoc_version(), "0.1.0") == 0);
  REQUIRE(assoc_last_error() != nullptr);
}

TEST_CASE("config create, set, dump round-trip") {
  Config c;
  REQUIRE(c.ptr != nullptr);
  CHECK(c.set("train.max_steps", "123") == ASSOC_OK);
  CHECK(c.set("model.arch", "FC(4)") == ASSOC_OK);

  char* dump = nullptr;
  REQUIRE(assoc_config_dump(c.ptr, &dump) == ASSOC_OK);
  REQUIRE(dump != nullptr);
  std::string text(dump);
  assoc_free(dump);
  CHECK(text.find("\"max_steps\": 123") != std::string::npos);
  CHECK(text.find("\"arch\": \"FC(4)\"") != std::string::npos);
}

TEST_CASE("bad keys and values produce config errors with messages") {
  Config c;
  CHECK(c.set("train.nope", "1") == ASSOC_ERR_CONFIG);
  std::string msg = assoc_last_error();
  CHECK(msg.find("train.nope") != std::string::npos);
  CHECK(c.set("train.max_steps", "not-a-number") == ASSOC_ERR_CONFIG);
  CHECK(c.set("train.max_steps", "-5") == ASSOC_OK);  // range-checked at run time

  // null arguments
  CHECK(assoc_config_set(nullptr, "a", "b") == ASSOC_ERR_CONFIG);
  CHECK(assoc_config_dump(c.ptr, nullptr) == ASSOC_ERR_CONFIG);
  assoc_config* out = nullptr;
  CHECK(assoc_config_load("/no/such/file.json", &out) == ASSOC_ERR_RUNTIME);
  CHECK(out == nullptr);
}

TEST_CASE("config files load through the c api") {
  TempDir tmp("assoc_capi_cfg");
  fs::path p = tmp.path / "cfg.json";
  std::ofstream(p) << R"({"train": {"max_steps": 9}})";
  assoc_config* cfg = nullptr;
  REQUIRE(assoc_config_load(p.string().c_str(), &cfg) == ASSOC_OK);
  char* dump = nullptr;
  REQUIRE(assoc_config_dump(cfg, &dump) == ASSOC_OK);
  CHECK(std::string(dump).find("\"max_steps\": 9") != std::string::npos);
  assoc_free(dump);
  assoc_config_destroy(cfg);

  std::ofstream(tmp.path / "bad.json") << R"({"unknown_section": 1})";
  assoc_config* bad = nullptr;
  CHECK(assoc_config_load((tmp.path / "bad.json").string().c_str(), &bad) == ASSOC_ERR_CONFIG);
}

TEST_CASE("train, evaluate, nn, dump through the c api") {
  TempDir tmp("assoc_capi_train");
  Config c;
  make_tiny(c, (tmp.path / "run").string());

  assoc_train_stats stats{};
  REQUIRE_MESSAGE(assoc_train(c.ptr, &stats) == ASSOC_OK, assoc_last_error());
  CHECK(stats.num_seeds == 1);
  CHECK(stats.median_min_error_percent >= 0.0);
  CHECK(stats.median_min_error_percent <= 100.0);
  CHECK(stats.stddev_min_error_percent == 0.0);
  CHECK(fs::exists(tmp.path / "run" / "checkpoint_final.ckpt"));

  assoc_eval_stats ev{};
  REQUIRE_MESSAGE(assoc_evaluate(c.ptr, &ev) == ASSOC_OK, assoc_last_error());
  CHECK(ev.samples == 160);
  CHECK(ev.error_percent <= 100.0);

  REQUIRE_MESSAGE(assoc_nearest_neighbors(c.ptr) == ASSOC_OK, assoc_last_error());
  CHECK(fs::exists(tmp.path / "run" / "nn.csv"));

  REQUIRE_MESSAGE(assoc_dump_associations(c.ptr) == ASSOC_OK, assoc_last_error());
  CHECK(fs::exists(tmp.path / "run" / "assoc"));

  double weights[2] = {0.0, 0.5};
  Config sweep;
  make_tiny(sweep, (tmp.path / "sweep").string());
  CHECK(sweep.set("train.max_steps", "15") == ASSOC_OK);
  REQUIRE_MESSAGE(assoc_sweep_visit(sweep.ptr, weights, 2, 2) == ASSOC_OK, assoc_last_error());
  CHECK(fs::exists(tmp.path / "sweep" / "sweep_visit.csv"));
}

TEST_CASE("runtime failures map to the runtime error code") {
  TempDir tmp("assoc_capi_err");
  Config c;
  make_tiny(c, (tmp.path / "run").string());
  // evaluating without a checkpoint is an i/o failure, not a config one;
  // a null stats pointer is allowed and does not mask the failure
  CHECK(assoc_evaluate(c.ptr, nullptr) == ASSOC_ERR_RUNTIME);
  assoc_eval_stats ev{};
  CHECK(assoc_evaluate(c.ptr, &ev) == ASSOC_ERR_RUNTIME);
  std::string msg = assoc_last_error();
  CHECK(msg.find("checkpoint_final.ckpt") != std::string::npos);

  // invalid architecture text is a config failure at run time
  Config bad;
  make_tiny(bad, (tmp.path / "run2").string());
  CHECK(bad.set("model.arch", "C(4,3)") == ASSOC_OK);  // parse deferred to the run
  assoc_train_stats stats{};
  CHECK(assoc_train(bad.ptr, &stats) == ASSOC_ERR_CONFIG);
}

TEST_CASE("last error is thread-local") {
  Config c;
  CHECK(c.set("train.bogus", "1") == ASSOC_ERR_CONFIG);
  std::string here = assoc_last_error();
  CHECK(!here.empty());
  std::string other = "unset";
  std::thread t([&] { other = assoc_last_error(); });
  t.join();
  CHECK(other.empty());  // the worker thread never failed
  CHECK(assoc_last_error() == here);
}
