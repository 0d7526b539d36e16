#include <assoc/association.h>

#include <cmath>
#include <doctest.h>
#include <random>
#include <vector>

#include "gradcheck.h"

using assoc::AssociationGraph;
using assoc::Graph;
using assoc::LossWeights;
using assoc::NdArray;
using assoc::NodeId;
using oracle::gradcheck;
using oracle::random_array;

namespace {

using F64 = NdArray<double>;

template <typename S>
void check_row_stochastic(const NdArray<S>& p, double tol) {
  REQUIRE(p.shape.size() == 2);
  for (std::size_t i = 0; i < p.shape[0]; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < p.shape[1]; ++j) {
      CHECK(p.at(i, j) >= 0);
      row += static_cast<double>(p.at(i, j));
    }
    CHECK(row == doctest::Approx(1.0).epsilon(tol));
  }
}

}  // namespace

TEST_SUITE("association") {

TEST_CASE("similarity is the embedding gram matrix") {
  Graph<double> g;
  NodeId a = g.value(F64({2, 2}, {1, 2, 3, 4}));
  NodeId b = g.value(F64({2, 2}, {1, 0, 0, 1}));
  const auto& m = g.val(assoc::similarity(g, a, b));
  CHECK(m.data == std::vector<double>{1, 2, 3, 4});
  NodeId c = g.value(F64({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(assoc::similarity(g, a, c), assoc::ShapeError);
}

TEST_CASE("round trip on the identity similarity") {
  Graph<double> g;
  NodeId m = g.value(F64({2, 2}, {1, 0, 0, 1}));
  auto tp = assoc::transition_probabilities(g, m);
  const auto& pab = g.val(tp.ab);
  CHECK(pab.at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(pab.at(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-12));

  NodeId paba = assoc::round_trip(g, tp.ab, tp.ba);
  CHECK(g.val(paba).at(0, 0) == doctest::Approx(0.6067761335170363).epsilon(1e-12));
  CHECK(g.val(paba).at(0, 1) == doctest::Approx(0.3932238664829637).epsilon(1e-12));

  NodeId walker = assoc::walker_loss(g, paba, assoc::walker_target<double>({0, 1}));
  CHECK(g.val(walker).data[0] == doctest::Approx(0.49959536399347315).epsilon(1e-12));

  NodeId visit = assoc::visit_loss(g, tp.ab);
  CHECK(g.val(visit).data[0] == doctest::Approx(0.69314718055994529).epsilon(1e-12));

  CHECK(assoc::correct_walk_probability(g.val(paba), {0, 1}) ==
        doctest::Approx(0.6067761335170363).epsilon(1e-12));
}

TEST_CASE("walker target is uniform over same-class columns") {
  F64 t = assoc::walker_target<double>({0, 1, 0});
  CHECK(t.data == std::vector<double>{0.5, 0, 0.5, 0, 1, 0, 0.5, 0, 0.5});
}

TEST_CASE("walker loss frozen values") {
  Graph<double> g;
  NodeId p1 = g.value(F64({2, 2}, {0.9, 0.1, 0.1, 0.9}));
  NodeId w1 = assoc::walker_loss(g, p1, assoc::walker_target<double>({0, 1}));
  CHECK(g.val(w1).data[0] == doctest::Approx(0.10536051565782628).epsilon(1e-12));

  NodeId p2 = g.value(F64({2, 2}, {0.5, 0.5, 0.5, 0.5}));
  NodeId w2 = assoc::walker_loss(g, p2, assoc::walker_target<double>({0, 1}));
  CHECK(g.val(w2).data[0] == doctest::Approx(0.69314718055994529).epsilon(1e-12));

  NodeId p3 = g.value(F64({2, 2}, {0.3, 0.7, 0.6, 0.4}));
  NodeId w3 = assoc::walker_loss(g, p3, assoc::walker_target<double>({0, 0}));
  CHECK(g.val(w3).data[0] == doctest::Approx(0.7469410259762036).epsilon(1e-12));

  // perfect round trip onto the right classes costs nothing
  NodeId p4 = g.value(F64({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  NodeId w4 = assoc::walker_loss(g, p4, assoc::walker_target<double>({0, 1}));
  CHECK(g.val(w4).data[0] == doctest::Approx(0.0).scale(1));
}

TEST_CASE("visit loss frozen values") {
  Graph<double> g;
  NodeId pab = g.value(F64({2, 3}, {0.2, 0.3, 0.5, 0.4, 0.4, 0.2}));
  const auto& pv = g.val(assoc::visit_probability(g, pab));
  CHECK(pv.shape == assoc::Shape{3});
  CHECK(pv.data[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(pv.data[1] == doctest::Approx(0.35).epsilon(1e-12));
  NodeId v = assoc::visit_loss(g, pab);
  CHECK(g.val(v).data[0] == doctest::Approx(1.1012056844410971).epsilon(1e-12));

  // uniform visits cost ln |B|
  NodeId u = g.value(F64::full({4, 3}, 1.0 / 3.0));
  CHECK(g.val(assoc::visit_loss(g, u)).data[0] ==
        doctest::Approx(1.0986122886681098).epsilon(1e-12));
}

TEST_CASE("classification loss is ln K on uniform logits") {
  Graph<double> g;
  NodeId logits = g.value(F64::zeros({5, 3}));
  NodeId c = assoc::classification_loss(g, logits, {0, 1, 2, 0, 1});
  CHECK(g.val(c).data[0] == doctest::Approx(1.0986122886681098).epsilon(1e-12));
}

TEST_CASE("transition matrices are row-stochastic") {
  auto run = [](auto tag, double tol) {
    using S = decltype(tag);
    std::mt19937 rng(314);
    std::uniform_real_distribution<double> d(-3, 3);
    for (int trial = 0; trial < 50; ++trial) {
      std::size_t na = 1 + rng() % 7, nb = 1 + rng() % 9, dim = 1 + rng() % 5;
      NdArray<S> a({na, dim}), b({nb, dim});
      for (auto& v : a.data) v = static_cast<S>(d(rng));
      for (auto& v : b.data) v = static_cast<S>(d(rng));
      Graph<S> g;
      NodeId m = assoc::similarity(g, g.value(a), g.value(b));
      auto tp = assoc::transition_probabilities(g, m);
      NodeId paba = assoc::round_trip(g, tp.ab, tp.ba);
      check_row_stochastic(g.val(tp.ab), tol);
      check_row_stochastic(g.val(tp.ba), tol);
      check_row_stochastic(g.val(paba), tol);
      const auto& pv = g.val(assoc::visit_probability(g, tp.ab));
      double total = 0;
      for (auto v : pv.data) total += static_cast<double>(v);
      CHECK(total == doctest::Approx(1.0).epsilon(tol));
    }
  };
  run(float{}, 1e-6);
  run(double{}, 1e-9);
}

TEST_CASE("weighted sum skips zero-weight terms") {
  Graph<double> g;
  NodeId a = g.value(F64::scalar(3));
  NodeId b = g.value(F64::scalar(100));
  NodeId c = g.value(F64::scalar(4));
  NodeId s = assoc::weighted_sum(g, {{a, 2.0}, {b, 0.0}, {c, 0.5}});
  CHECK(g.val(s).data[0] == doctest::Approx(8.0).epsilon(1e-14));

  NodeId z = assoc::weighted_sum(g, {{a, 0.0}, {b, 0.0}});
  CHECK(g.val(z).data[0] == 0.0);

  CHECK_THROWS_AS(assoc::weighted_sum(g, {{a, -1.0}}), assoc::ConfigError);
  CHECK_THROWS_AS(assoc::weighted_sum(g, {{a, std::nan("")}}), assoc::ConfigError);
}

TEST_CASE("zero weight keeps the term out of the gradient") {
  // if the skipped term leaked into the graph arithmetic, its gradient
  // contribution would perturb the embedding gradient
  auto grads_with = [](double visit_weight) {
    Graph<double> g;
    NodeId emb_a = g.parameter(oracle::random_array({4, 3}, 21));
    NodeId emb_b = g.value(oracle::random_array({5, 3}, 22));
    NodeId logits = g.value(oracle::random_array({4, 2}, 23));
    auto ag = assoc::total_loss(g, emb_a, emb_b, {0, 1, 0, 1}, logits,
                                {1.0, visit_weight, 1.0});
    g.backward(ag.total);
    return g.grad(emb_a).data;
  };
  auto g0 = grads_with(0.0);
  auto g1 = grads_with(1.0);
  bool differ = g0 != g1;
  CHECK(differ);
  CHECK(g0 == grads_with(0.0));
}

TEST_CASE("total loss wires the full association graph") {
  Graph<double> g;
  NodeId emb_a = g.value(oracle::random_array({6, 4}, 31));
  NodeId emb_b = g.value(oracle::random_array({8, 4}, 32));
  NodeId logits = g.value(oracle::random_array({6, 3}, 33));
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  LossWeights w{0.7, 0.3, 1.5};
  auto ag = assoc::total_loss(g, emb_a, emb_b, labels, logits, w);
  CHECK(g.val(ag.m).shape == assoc::Shape{6, 8});
  CHECK(g.val(ag.paba).shape == assoc::Shape{6, 6});
  CHECK(g.val(ag.pvisit).shape == assoc::Shape{8});
  double expect = 0.7 * g.val(ag.walker).data[0] + 0.3 * g.val(ag.visit).data[0] +
                  1.5 * g.val(ag.classification).data[0];
  CHECK(g.val(ag.total).data[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(assoc::total_loss(g, emb_a, emb_b, {0, 1}, logits, w), assoc::ShapeError);
}

TEST_CASE("association losses are differentiable end to end") {
  auto r = gradcheck(
      [](Graph<double>& g, const std::vector<NodeId>& in) {
        auto ag = assoc::total_loss(g, in[0], in[1], {0, 1, 0, 1}, in[2], {1.0, 0.6, 1.0});
        return ag.total;
      },
      {random_array({4, 3}, 41), random_array({6, 3}, 42), random_array({4, 2}, 43)});
  CHECK_MESSAGE(r.ok, r.where);
}

TEST_CASE("correct walk probability sums same-class mass") {
  F64 paba({2, 2}, {0.9, 0.1, 0.2, 0.8});
  CHECK(assoc::correct_walk_probability(paba, {0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(assoc::correct_walk_probability(paba, {0, 1}) == doctest::Approx(0.85).epsilon(1e-12));
  CHECK_THROWS_AS(assoc::correct_walk_probability(paba, {0}), assoc::ShapeError);
}

}  // TEST_SUITE
