#include <assoc/checkpoint.h>

#include <doctest.h>
#include <filesystem>
#include <fstream>

using assoc::Checkpoint;
using assoc::CheckpointMeta;
using assoc::NdArray;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "assoc_ckpt_test") { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
};

CheckpointMeta meta() {
  CheckpointMeta m;
  m.arch = "C(4,3)->FC(8)";
  m.embedding_dim = 8;
  m.num_classes = 3;
  m.input = {8, 8, 1};
  m.step = 1234;
  return m;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round-trips meta and tensors exactly") {
  TempDir tmp;
  std::string p = (tmp.path / "a.ckpt").string();
  NdArray<float> w({2, 3}, {1.5f, -2.25f, 0.0f, 1e-20f, 3e8f, -1.0f});
  NdArray<float> b({3}, {0.1f, 0.2f, 0.3f});
  assoc::save_checkpoint(p, meta(), {{"fc0.weight", w}, {"fc0.bias", b}});

  Checkpoint ck = assoc::load_checkpoint(p);
  CHECK(ck.meta.arch == "C(4,3)->FC(8)");
  CHECK(ck.meta.embedding_dim == 8);
  CHECK(ck.meta.num_classes == 3);
  CHECK(ck.meta.input == assoc::InputShape{8, 8, 1});
  CHECK(ck.meta.step == 1234);
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].first == "fc0.weight");
  CHECK(ck.tensors[0].second.shape == assoc::Shape{2, 3});
  CHECK(ck.tensors[0].second.data == w.data);  // bit-exact floats
  REQUIRE(ck.find("fc0.bias") != nullptr);
  CHECK(ck.find("fc0.bias")->data == b.data);
  CHECK(ck.find("nope") == nullptr);
}

TEST_CASE("saving twice produces identical bytes") {
  TempDir tmp;
  NdArray<float> w({2}, {1.0f, 2.0f});
  std::string p1 = (tmp.path / "one.ckpt").string();
  std::string p2 = (tmp.path / "two.ckpt").string();
  assoc::save_checkpoint(p1, meta(), {{"w", w}});
  assoc::save_checkpoint(p2, meta(), {{"w", w}});
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(p1) == slurp(p2));
  CHECK(slurp(p1).substr(0, 4) == "ASSC");
  // no stray temp files once save returns
  int files = 0;
  for (auto& e : fs::directory_iterator(tmp.path)) {
    (void)e;
    ++files;
  }
  CHECK(files == 2);
}

TEST_CASE("loader rejects corrupted files") {
  TempDir tmp;
  std::string p = (tmp.path / "c.ckpt").string();
  NdArray<float> w({4}, {1, 2, 3, 4});
  assoc::save_checkpoint(p, meta(), {{"w", w}});
  auto slurp = [&] {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  std::string bytes = slurp();

  auto write_as = [&](const std::string& body, const char* name) {
    std::string q = (tmp.path / name).string();
    std::ofstream(q, std::ios::binary).write(body.data(), static_cast<long>(body.size()));
    return q;
  };
  // bad magic
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(assoc::load_checkpoint(write_as(bad, "magic")), assoc::IoError);
  // unsupported version
  std::string ver = bytes;
  ver[4] = 9;
  CHECK_THROWS_AS(assoc::load_checkpoint(write_as(ver, "version")), assoc::IoError);
  // truncated tensor payload
  CHECK_THROWS_AS(assoc::load_checkpoint(write_as(bytes.substr(0, bytes.size() - 5), "trunc")),
                  assoc::IoError);
  // truncated header
  CHECK_THROWS_AS(assoc::load_checkpoint(write_as(bytes.substr(0, 6), "header")), assoc::IoError);
  CHECK_THROWS_AS(assoc::load_checkpoint((tmp.path / "absent.ckpt").string()), assoc::IoError);
}

TEST_CASE("error messages carry the file path") {
  TempDir tmp;
  std::string p = (tmp.path / "named.ckpt").string();
  std::ofstream(p, std::ios::binary) << "not a checkpoint";
  try {
    assoc::load_checkpoint(p);
    FAIL("expected a throw");
  } catch (const assoc::IoError& e) {
    CHECK(std::string(e.what()).find("named.ckpt") != std::string::npos);
  }
}

}  // TEST_SUITE
