#include <assoc/optim.h>

#include <cmath>
#include <doctest.h>

using assoc::AdamConfig;
using assoc::NdArray;
using assoc::Parameters;

namespace {

Parameters<double> two_params() {
  Parameters<double> p;
  p.tensors.emplace_back("w", NdArray<double>({2}, {1.0, -2.0}));
  return p;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("adam follows the reference trajectory") {
  Parameters<double> p = two_params();
  auto st = assoc::make_adam_state(p, AdamConfig{});
  std::vector<NdArray<double>> g1{NdArray<double>({2}, {0.5, -1.0})};
  std::vector<NdArray<double>> g2{NdArray<double>({2}, {0.25, 0.5})};
  std::vector<NdArray<double>> g3{NdArray<double>({2}, {-0.75, 0.1})};

  assoc::adam_step(p, g1, st);
  CHECK(st.t == 1);
  CHECK(p.tensors[0].second.data[0] == doctest::Approx(0.99900000002).epsilon(1e-12));
  CHECK(p.tensors[0].second.data[1] == doctest::Approx(-1.9990000000099999).epsilon(1e-12));

  assoc::adam_step(p, g2, st);
  CHECK(p.tensors[0].second.data[0] == doctest::Approx(0.9980678204047746).epsilon(1e-12));
  CHECK(p.tensors[0].second.data[1] == doctest::Approx(-1.998733662973709).epsilon(1e-12));

  assoc::adam_step(p, g3, st);
  CHECK(p.tensors[0].second.data[0] == doctest::Approx(0.9981497972011077).epsilon(1e-12));
  CHECK(p.tensors[0].second.data[1] == doctest::Approx(-1.9985855646446105).epsilon(1e-12));
}

TEST_CASE("first step moves by roughly the learning rate") {
  // with bias correction, step 1 is lr * g/|g| up to eps
  Parameters<double> p = two_params();
  auto st = assoc::make_adam_state(p, AdamConfig{});
  std::vector<NdArray<double>> g{NdArray<double>({2}, {1e-3, -42.0})};
  assoc::adam_step(p, g, st);
  CHECK(p.tensors[0].second.data[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
  CHECK(p.tensors[0].second.data[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-7));
}

TEST_CASE("learning rate decay compounds per step") {
  Parameters<double> p = two_params();
  AdamConfig cfg;
  cfg.lr_decay = 0.9;
  auto st = assoc::make_adam_state(p, cfg);
  std::vector<std::vector<double>> gs{{0.5, -1.0}, {0.25, 0.5}, {-0.75, 0.1}};
  for (const auto& g : gs) {
    std::vector<NdArray<double>> gv{NdArray<double>({2}, g)};
    assoc::adam_step(p, gv, st);
  }
  CHECK(p.tensors[0].second.data[0] == doctest::Approx(0.9982274395713271).epsilon(1e-12));
  CHECK(p.tensors[0].second.data[1] == doctest::Approx(-1.9986403370307684).epsilon(1e-12));
}

TEST_CASE("non-finite gradients abort before any mutation") {
  Parameters<double> p = two_params();
  auto st = assoc::make_adam_state(p, AdamConfig{});
  std::vector<NdArray<double>> bad{NdArray<double>({2}, {1.0, std::nan("")})};
  try {
    assoc::adam_step(p, bad, st);
    FAIL("expected a throw");
  } catch (const assoc::Error& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK(p.tensors[0].second.data[0] == 1.0);
  CHECK(st.t == 0);
  CHECK(st.m[0].data[0] == 0.0);
}

TEST_CASE("shape and count mismatches are rejected") {
  Parameters<double> p = two_params();
  auto st = assoc::make_adam_state(p, AdamConfig{});
  std::vector<NdArray<double>> wrong{NdArray<double>({3}, {1, 2, 3})};
  CHECK_THROWS_AS(assoc::adam_step(p, wrong, st), assoc::ShapeError);
  std::vector<NdArray<double>> none;
  CHECK_THROWS_AS(assoc::adam_step(p, none, st), assoc::Error);
}

}  // TEST_SUITE
