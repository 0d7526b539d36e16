#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "assoc/graph.h"

namespace assoc {

// weights for the three loss terms; zero disables a term entirely
struct LossWeights {
  double walker = 1.0;
  double visit = 1.0;
  double classification = 1.0;
};

// floor applied inside every log over probabilities
inline constexpr double kLogFloor = 1e-8;

// M[i,j] = <a_i, b_j>
template <typename S>
NodeId similarity(Graph<S>& g, NodeId emb_a, NodeId emb_b) {
  const auto& a = g.val(emb_a);
  const auto& b = g.val(emb_b);
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw ShapeError("similarity: embeddings must be rank-2");
  if (a.shape[1] != b.shape[1])
    throw ShapeError("similarity: embedding dims differ, " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  return g.matmul(emb_a, g.transpose(emb_b));
}

struct TransitionPair {
  NodeId ab;  // P(b_j | a_i), rows sum to 1
  NodeId ba;  // P(a_i | b_j)
};

template <typename S>
TransitionPair transition_probabilities(Graph<S>& g, NodeId m) {
  return {g.softmax_rows(m), g.softmax_rows(g.transpose(m))};
}

// Paba = Pab * Pba
template <typename S>
NodeId round_trip(Graph<S>& g, NodeId pab, NodeId pba) {
  return g.matmul(pab, pba);
}

// uniform distribution over same-class rows: T[i,j] = 1/#class(a_i) if labels match
template <typename S>
NdArray<S> walker_target(const std::vector<int>& labels) {
  std::size_t n = labels.size();
  NdArray<S> t({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t same = 0;
    for (std::size_t j = 0; j < n; ++j) same += labels[i] == labels[j];
    S w = static_cast<S>(1.0 / static_cast<double>(same));
    for (std::size_t j = 0; j < n; ++j)
      if (labels[i] == labels[j]) t.at(i, j) = w;
  }
  return t;
}

// cross-entropy H(T, Paba) averaged over rows
template <typename S>
NodeId walker_loss(Graph<S>& g, NodeId paba, const NdArray<S>& target) {
  Shape pshape = g.val(paba).shape;
  if (!(pshape == target.shape))
    throw ShapeError("walker_loss: target " + shape_str(target.shape) + " vs round trip " +
                     shape_str(pshape));
  NodeId t = g.value(target);
  NodeId logged = g.log_clamped(paba, static_cast<S>(kLogFloor));
  return g.scale(g.sum(g.mul(t, logged)), static_cast<S>(-1.0 / static_cast<double>(pshape[0])));
}

// column means of Pab: probability of visiting each unlabeled sample
template <typename S>
NodeId visit_probability(Graph<S>& g, NodeId pab) {
  return g.mean_over_rows(pab);
}

// cross-entropy against the uniform distribution over B
template <typename S>
NodeId visit_loss_from(Graph<S>& g, NodeId pvisit) {
  std::size_t cols = g.val(pvisit).shape[0];
  NodeId logged = g.log_clamped(pvisit, static_cast<S>(kLogFloor));
  return g.scale(g.sum(logged), static_cast<S>(-1.0 / static_cast<double>(cols)));
}

template <typename S>
NodeId visit_loss(Graph<S>& g, NodeId pab) {
  return visit_loss_from<S>(g, visit_probability(g, pab));
}

template <typename S>
NodeId classification_loss(Graph<S>& g, NodeId logits, std::vector<int> labels) {
  return g.softmax_cross_entropy(logits, std::move(labels));
}

// mass of Paba landing on same-class columns, averaged over rows (diagnostic)
template <typename S>
double correct_walk_probability(const NdArray<S>& paba, const std::vector<int>& labels) {
  if (paba.shape.size() != 2 || paba.shape[0] != paba.shape[1])
    throw ShapeError("correct_walk_probability: round trip must be square");
  if (labels.size() != paba.shape[0])
    throw ShapeError("correct_walk_probability: label count mismatch");
  std::size_t n = labels.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (labels[i] == labels[j]) acc += static_cast<double>(paba.at(i, j));
  return acc / static_cast<double>(n);
}

// weighted sum that skips zero-weight terms, so a disabled term leaves no
// trace in the arithmetic; all weights zero yields a constant 0
template <typename S>
NodeId weighted_sum(Graph<S>& g, const std::vector<std::pair<NodeId, double>>& terms) {
  NodeId acc{};
  bool have = false;
  for (const auto& [node, w] : terms) {
    if (!std::isfinite(w) || w < 0)
      throw ConfigError("loss weights must be finite and non-negative");
    if (w == 0) continue;
    NodeId scaled = g.scale(node, static_cast<S>(w));
    acc = have ? g.add(acc, scaled) : scaled;
    have = true;
  }
  return have ? acc : g.value(NdArray<S>::scalar(0));
}

template <typename S>
struct AssociationGraph {
  NodeId m, pab, pba, paba, pvisit;
  NodeId walker, visit, classification;  // unweighted scalars
  NodeId total;                          // weighted sum of the three
};

// builds the full association loss between labeled embeddings A and
// unlabeled embeddings B
template <typename S>
AssociationGraph<S> total_loss(Graph<S>& g, NodeId emb_a, NodeId emb_b,
                               const std::vector<int>& labels_a, NodeId logits_a,
                               const LossWeights& w) {
  if (labels_a.size() != g.val(emb_a).shape[0])
    throw ShapeError("total_loss: labels do not match embedding rows");
  AssociationGraph<S> r;
  r.m = similarity(g, emb_a, emb_b);
  TransitionPair tp = transition_probabilities(g, r.m);
  r.pab = tp.ab;
  r.pba = tp.ba;
  r.paba = round_trip(g, r.pab, r.pba);
  r.pvisit = visit_probability(g, r.pab);
  r.walker = walker_loss(g, r.paba, walker_target<S>(labels_a));
  r.visit = visit_loss_from<S>(g, r.pvisit);
  r.classification = classification_loss(g, logits_a, labels_a);
  r.total = weighted_sum(g, {{r.walker, w.walker}, {r.visit, w.visit},
                             {r.classification, w.classification}});
  return r;
}

// snapshot of the association tensors for one step, in double precision
struct AssociationDump {
  long long step = 0;
  std::size_t batch_a = 0;
  std::size_t batch_b = 0;
  NdArray<double> m, pab, pba, paba, pvisit;
  double walker = 0, visit = 0, classification = 0, total = 0;
};

// writes M/Pab/Pba/Paba/Pvisit as CSV plus a meta.json sidecar
void write_association_dump(const std::filesystem::path& dir, const AssociationDump& dump);

}  // namespace assoc
