#include <assoc/graph.h>

#include <cmath>
#include <doctest.h>
#include <vector>

#include "gradcheck.h"

using assoc::Graph;
using assoc::NdArray;
using assoc::NodeId;
using assoc::ShapeError;
using oracle::gradcheck;
using oracle::probe;
using oracle::random_array;

namespace {

using F64 = NdArray<double>;
using F32 = NdArray<float>;

void check_close(const F64& got, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.data[i] - want[i]) <= tol);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul forward") {
  Graph<double> g;
  NodeId a = g.value(F64({1, 2}, {1, 2}));
  NodeId b = g.value(F64({2, 1}, {3, 4}));
  NodeId c = g.matmul(a, b);
  CHECK(g.val(c).shape == assoc::Shape{1, 1});
  CHECK(g.val(c).data[0] == 11.0);
  CHECK_THROWS_AS(g.matmul(a, a), ShapeError);
}

TEST_CASE("matmul gradient") {
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return probe(g, g.matmul(in[0], in[1]), 11);
      },
      {random_array({2, 3}, 1), random_array({3, 4}, 2)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("transpose forward and gradient") {
  Graph<double> g;
  NodeId a = g.value(F64({2, 3}, {1, 2, 3, 4, 5, 6}));
  check_close(g.val(g.transpose(a)), {1, 4, 2, 5, 3, 6});

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return probe(gg, gg.transpose(in[0]), 12);
      },
      {random_array({2, 3}, 3)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("softmax rows forward") {
  Graph<double> g;
  NodeId a = g.value(F64({1, 2}, {0.0, std::log(3.0)}));
  check_close(g.val(g.softmax_rows(a)), {0.25, 0.75});
  // translation invariance via the max shift
  NodeId b = g.value(F64({1, 2}, {1000.0, 1000.0 + std::log(3.0)}));
  check_close(g.val(g.softmax_rows(b)), {0.25, 0.75});
}

TEST_CASE("softmax rows gradient") {
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return probe(g, g.softmax_rows(in[0]), 13);
      },
      {random_array({3, 4}, 4, -2, 2)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("elu forward") {
  Graph<double> g;
  NodeId a = g.value(F64({1, 3}, {-1.0, 0.0, 2.0}));
  check_close(g.val(g.elu(a)), {-0.63212055882855767, 0.0, 2.0});
}

TEST_CASE("elu gradient") {
  // keep inputs away from the kink at 0
  F64 in({2, 3}, {-1.5, -0.7, 0.3, 1.2, -0.2, 2.0});
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& ids) { return probe(g, g.elu(ids[0]), 14); },
      {in});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("conv forward, all ones") {
  Graph<double> g;
  NodeId x = g.value(F64::full({1, 3, 3, 1}, 1.0));
  NodeId k = g.value(F64::full({3, 3, 1, 1}, 1.0));
  NodeId y = g.conv2d(x, k, 1);
  CHECK(g.val(y).shape == assoc::Shape{1, 3, 3, 1});
  check_close(g.val(y), {4, 6, 4, 6, 9, 6, 4, 6, 4});
}

TEST_CASE("conv forward, stride 2 same padding") {
  F64 x = F64::zeros({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
  F64 k = F64::zeros({3, 3, 1, 2});
  const double k0[9] = {1, 0, -1, 2, 0, -2, 1, 0, -1};
  const double k1[9] = {0.5, 1, 0.5, 0, 0, 0, -0.5, -1, -0.5};
  for (std::size_t i = 0; i < 9; ++i) {
    k.data[i * 2] = k0[i];
    k.data[i * 2 + 1] = k1[i];
  }
  Graph<double> g;
  NodeId y = g.conv2d(g.value(x), g.value(k), 2);
  CHECK(g.val(y).shape == assoc::Shape{1, 2, 2, 2});
  check_close(g.val(y), {-8, -16, 24, -12, -6, 18, 38, 16});
}

TEST_CASE("conv gradient") {
  for (int stride : {1, 2}) {
    auto r = gradcheck(
        [stride](Graph<double>& g, const std::vector<NodeId>& in) {
          return probe(g, g.conv2d(in[0], in[1], stride), 15);
        },
        {random_array({2, 4, 4, 2}, 5), random_array({3, 3, 2, 3}, 6)});
    CHECK_MESSAGE(r.ok, "stride " << stride << ": " << r.where);
  }
}

TEST_CASE("maxpool forward") {
  F64 x = F64::zeros({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
  Graph<double> g;
  check_close(g.val(g.maxpool2d(g.value(x), 2, 2)), {5, 7, 13, 15});

  // 5x5 with clipped edge windows
  F64 x5 = F64::zeros({1, 5, 5, 1});
  for (std::size_t i = 0; i < 25; ++i) x5.data[i] = static_cast<double>(i);
  check_close(g.val(g.maxpool2d(g.value(x5), 2, 2)), {6, 8, 9, 16, 18, 19, 21, 23, 24});
}

TEST_CASE("maxpool gradient") {
  // distinct values so the argmax is unambiguous under perturbation
  F64 x = random_array({1, 5, 5, 2}, 7);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += static_cast<double>(i) * 0.37;
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return probe(g, g.maxpool2d(in[0], 2, 2), 16);
      },
      {x});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("maxpool tie routes to first in scan order") {
  Graph<double> g;
  NodeId x = g.parameter(F64({1, 2, 2, 1}, {5, 5, 1, 2}));
  NodeId loss = g.sum(g.maxpool2d(x, 2, 2));
  g.backward(loss);
  check_close(g.grad(x), {1, 0, 0, 0});
}

TEST_CASE("dense forward and gradient") {
  Graph<double> g;
  NodeId x = g.value(F64({1, 2}, {1, 1}));
  NodeId w = g.value(F64({2, 1}, {1, 2}));
  NodeId b = g.value(F64({1}, {3}));
  check_close(g.val(g.dense(x, w, b)), {6});

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return probe(gg, gg.dense(in[0], in[1], in[2]), 17);
      },
      {random_array({3, 4}, 8), random_array({4, 2}, 9), random_array({2}, 10)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("elementwise ops") {
  Graph<double> g;
  NodeId a = g.value(F64({2}, {1, 2}));
  NodeId b = g.value(F64({2}, {10, 20}));
  check_close(g.val(g.add(a, b)), {11, 22});
  check_close(g.val(g.mul(a, b)), {10, 40});
  check_close(g.val(g.scale(a, 2.5)), {2.5, 5});
  CHECK_THROWS_AS(g.add(a, g.value(F64({3}, {1, 2, 3}))), ShapeError);

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return probe(gg, gg.add(gg.mul(in[0], in[1]), gg.scale(in[0], 0.5)), 18);
      },
      {random_array({2, 3}, 11), random_array({2, 3}, 12)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("log clamped forward and floor gradient") {
  Graph<double> g;
  NodeId a = g.parameter(F64({3}, {0.5, 1.0, 0.0}));
  NodeId logged = g.log_clamped(a, 1e-8);
  check_close(g.val(logged), {std::log(0.5), 0.0, -18.420680743952367});
  g.backward(g.sum(logged));
  // clamped entry contributes zero gradient
  check_close(g.grad(a), {2.0, 1.0, 0.0});

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return probe(gg, gg.log_clamped(in[0], 1e-8), 19);
      },
      {random_array({2, 3}, 13, 0.2, 2.0)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("reductions") {
  Graph<double> g;
  NodeId a = g.value(F64({2, 2}, {1, 2, 3, 4}));
  check_close(g.val(g.sum(a)), {10});
  check_close(g.val(g.mean_over_rows(a)), {2, 3});

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return probe(gg, gg.mean_over_rows(in[0]), 20);
      },
      {random_array({3, 4}, 14)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("reshape keeps data and routes gradient") {
  Graph<double> g;
  NodeId a = g.parameter(F64({2, 3}, {1, 2, 3, 4, 5, 6}));
  NodeId b = g.reshape(a, {3, 2});
  check_close(g.val(b), {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(g.reshape(a, {4, 2}), ShapeError);
  g.backward(probe(g, b, 21));
  CHECK(g.grad(a).size() == 6);
}

TEST_CASE("bias add gradient") {
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        return probe(g, g.bias_add(in[0], in[1]), 22);
      },
      {random_array({1, 3, 3, 2}, 15), random_array({2}, 16)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("softmax cross entropy forward") {
  Graph<double> g;
  NodeId l = g.value(F64({1, 3}, {1, 2, 3}));
  NodeId loss = g.softmax_cross_entropy(l, {2});
  check_close(g.val(loss), {0.40760596444438046});
  // uniform logits: ln K
  NodeId u = g.value(F64::zeros({2, 3}));
  check_close(g.val(g.softmax_cross_entropy(u, {0, 1})), {1.0986122886681098});
  CHECK_THROWS(g.softmax_cross_entropy(l, {3}));
  CHECK_THROWS(g.softmax_cross_entropy(l, {2, 0}));
}

TEST_CASE("softmax cross entropy gradient") {
  Graph<double> g;
  NodeId l = g.parameter(F64({1, 3}, {1, 2, 3}));
  g.backward(g.softmax_cross_entropy(l, {2}));
  check_close(g.grad(l), {0.09003057317038046, 0.24472847105479764, -0.3347590442251782}, 1e-12);

  auto r = gradcheck(
      [](Graph<double>& gg, const std::vector<NodeId>& in) {
        return gg.softmax_cross_entropy(in[0], {2, 0, 1});
      },
      {random_array({3, 4}, 17, -2, 2)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("backward requires a scalar loss") {
  Graph<double> g;
  NodeId a = g.parameter(F64({2}, {1, 2}));
  CHECK_THROWS_AS(g.backward(a), assoc::Error);
}

TEST_CASE("gradients flow only into reachable parameters") {
  Graph<double> g;
  NodeId used = g.parameter(F64({2}, {1, 2}));
  NodeId unused = g.parameter(F64({2}, {3, 4}));
  NodeId loss = g.sum(used);
  g.backward(loss);
  check_close(g.grad(used), {1, 1});
  check_close(g.grad(unused), {0, 0});
}

TEST_CASE("value leaves accumulate no gradient") {
  Graph<double> g;
  NodeId p = g.parameter(F64({2}, {1, 2}));
  NodeId v = g.value(F64({2}, {5, 5}));
  g.backward(g.sum(g.mul(p, v)));
  check_close(g.grad(p), {5, 5});
  check_close(g.grad(v), {0, 0});
}

TEST_CASE("recompute replays the tape bit-identically") {
  Graph<float> g;
  F32 x = F32::zeros({2, 3, 3, 2});
  std::mt19937 rng(99);
  std::uniform_real_distribution<float> d(-1, 1);
  for (auto& v : x.data) v = d(rng);
  F32 k = F32::zeros({3, 3, 2, 2});
  for (auto& v : k.data) v = d(rng);
  NodeId out = g.softmax_rows(
      g.reshape(g.elu(g.maxpool2d(g.conv2d(g.value(x), g.value(k), 1), 2, 2)), {2, 8}));
  std::vector<float> before = g.val(out).data;
  g.recompute();
  CHECK(g.val(out).data == before);
}

TEST_CASE("finite checking flags bad inputs when enabled") {
  Graph<double> g;
  g.set_check_finite(true);
  F64 bad({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS(g.value(bad));
  Graph<double> off;
  CHECK_NOTHROW(off.value(bad));
}

}  // TEST_SUITE
