#pragma once

#include <assoc/graph.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using assoc::Graph;
using assoc::NdArray;
using assoc::NodeId;

struct GradCheckResult {
  bool ok = true;
  double worst = 0;
  std::string where;
};

// Reference gradient: central differences over the forward pass, h = 1e-5.
// build(g, leaves) must construct the same scalar loss for any leaf values.
// Pass iff |analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|))
// entrywise.
template <typename Build>
GradCheckResult gradcheck(Build build, std::vector<NdArray<double>> inputs, double h = 1e-5,
                          double rtol = 1e-3, double atol = 1e-8) {
  Graph<double> g;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (auto& in : inputs) ids.push_back(g.parameter(in));
  g.backward(build(g, ids));
  std::vector<NdArray<double>> analytic;
  analytic.reserve(ids.size());
  for (NodeId id : ids) analytic.push_back(g.grad(id));

  auto eval = [&](const std::vector<NdArray<double>>& xs) {
    Graph<double> fresh;
    std::vector<NodeId> vs;
    vs.reserve(xs.size());
    for (const auto& x : xs) vs.push_back(fresh.value(x));
    return fresh.val(build(fresh, vs)).data[0];
  };

  GradCheckResult r;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      double saved = inputs[t].data[i];
      inputs[t].data[i] = saved + h;
      double up = eval(inputs);
      inputs[t].data[i] = saved - h;
      double down = eval(inputs);
      inputs[t].data[i] = saved;
      double numeric = (up - down) / (2 * h);
      double a = analytic[t].data[i];
      double err = std::fabs(a - numeric);
      double tol = std::max(atol, rtol * std::max(std::fabs(a), std::fabs(numeric)));
      if (err > tol && err >= r.worst) {
        r.ok = false;
        r.worst = err;
        r.where = "input " + std::to_string(t) + " entry " + std::to_string(i) + ": analytic " +
                  std::to_string(a) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline NdArray<double> random_array(assoc::Shape shape, unsigned seed, double lo = -1.0,
                                    double hi = 1.0) {
  NdArray<double> a = NdArray<double>::zeros(std::move(shape));
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : a.data) v = dist(rng);
  return a;
}

// fixed cotangent so gradchecks exercise general (non-uniform) upstream grads
template <typename S>
NodeId probe(Graph<S>& g, NodeId out, unsigned seed) {
  NdArray<double> r = random_array(g.val(out).shape, seed);
  NdArray<S> rs = NdArray<S>::zeros(r.shape);
  for (std::size_t i = 0; i < r.size(); ++i) rs.data[i] = static_cast<S>(r.data[i]);
  return g.sum(g.mul(out, g.value(rs)));
}

}  // namespace oracle
