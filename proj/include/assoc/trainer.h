#pragma once

#include <cstdint>
#include <vector>

#include "assoc/config.h"
#include "assoc/data.h"
#include "assoc/model.h"

namespace assoc {

struct RunStats {
  std::uint64_t seed = 0;
  double min_test_error_percent = 100.0;
  long long min_error_step = -1;
  double final_total_loss = 0;
  double wall_time_s = 0;
};

struct TrainOutcome {
  std::vector<RunStats> runs;
  double median_min_error = 0;
  double stddev_min_error = 0;  // sample stddev; 0 for a single run
  double wall_time_s = 0;
};

struct AdaptStats {
  std::uint64_t seed = 0;
  double source_only_error = 0;       // target test error after phase 1
  double adapted_error = 0;           // min target test error during phase 2
  double target_only_error = -1;      // supervised-on-target bound; -1 if skipped
  double gap_coverage_percent = 0;    // NaN when the baseline is skipped
  double wall_time_s = 0;
};

struct AdaptOutcome {
  std::vector<AdaptStats> runs;
  double median_source_only = 0;
  double median_adapted = 0;
  double median_target_only = -1;
  double median_gap_coverage = 0;
  double wall_time_s = 0;
};

struct EvalOutcome {
  double error_percent = 0;
  std::size_t samples = 0;
  std::vector<std::vector<long long>> confusion;  // [true][predicted]
};

struct SweepRow {
  double visit_weight = 0;
  double median_min_error = 0;
  double stddev_min_error = 0;
};

// train/adapt write metrics.jsonl, confusion.csv, checkpoints, run_summary.json
// (and aggregate.json across seeds) under train.out_dir
TrainOutcome train_run(const RunConfig& cfg);
AdaptOutcome adapt_run(const RunConfig& cfg);

// loads eval.checkpoint (default <out_dir>/checkpoint_final.ckpt) and scores
// the test split of the configured data source
EvalOutcome evaluate_run(const RunConfig& cfg);

// one run per visit weight under <out_dir>/visit_<w>/, plus sweep_visit.csv;
// parallel > 1 fans runs out over threads
std::vector<SweepRow> sweep_visit_run(const RunConfig& cfg, const std::vector<double>& weights,
                                      int parallel);

// writes the association tensors for one freshly sampled batch pair
// under <out_dir>/assoc/step_<n>/
void assoc_dump_run(const RunConfig& cfg);

// writes cosine nearest neighbors of test queries against the train corpus
// to <out_dir>/nn.csv
void nearest_neighbors_run(const RunConfig& cfg);

// ---- reusable pieces (also exercised directly by tests) ----

template <typename S>
NdArray<S> to_precision(const NdArray<float>& a) {
  if constexpr (std::is_same_v<S, float>) return a;
  else return cast_array<S>(a);
}

// embeddings for every row of ds, computed in eval-sized slices
template <typename S>
NdArray<S> embed_dataset(const ModelSpec& spec, const Parameters<S>& params, const Dataset& ds,
                         std::size_t slice = 256) {
  std::size_t n = ds.size();
  NdArray<S> out({n, static_cast<std::size_t>(spec.embedding_dim)});
  std::size_t dim = static_cast<std::size_t>(spec.embedding_dim);
  for (std::size_t at = 0; at < n; at += slice) {
    std::size_t take = std::min(slice, n - at);
    std::vector<std::size_t> idx(take);
    for (std::size_t i = 0; i < take; ++i) idx[i] = at + i;
    Graph<S> g;
    ParamNodes<S> pn = upload_parameters(g, params);
    NodeId images = g.value(to_precision<S>(gather_images(ds, idx)));
    ForwardResult<S> fw = forward(g, spec, pn, images);
    const NdArray<S>& emb = g.val(fw.embeddings);
    std::copy(emb.data.begin(), emb.data.end(), out.data.begin() + at * dim);
  }
  return out;
}

// argmax classification; ties resolve to the lowest class index
template <typename S>
EvalOutcome evaluate(const ModelSpec& spec, const Parameters<S>& params, const Dataset& test,
                     int num_classes, std::size_t slice = 256) {
  if (!test.labeled()) throw Error("evaluate: test split has no labels");
  EvalOutcome out;
  out.samples = test.size();
  out.confusion.assign(num_classes, std::vector<long long>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t at = 0; at < test.size(); at += slice) {
    std::size_t take = std::min(slice, test.size() - at);
    std::vector<std::size_t> idx(take);
    for (std::size_t i = 0; i < take; ++i) idx[i] = at + i;
    Graph<S> g;
    ParamNodes<S> pn = upload_parameters(g, params);
    NodeId images = g.value(to_precision<S>(gather_images(test, idx)));
    ForwardResult<S> fw = forward(g, spec, pn, images);
    const NdArray<S>& logits = g.val(fw.logits);
    std::size_t k = logits.shape[1];
    for (std::size_t i = 0; i < take; ++i) {
      const S* row = logits.data.data() + i * k;
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      int truth = test.labels[at + i];
      out.confusion[truth][best] += 1;
      correct += static_cast<std::size_t>(truth) == best;
    }
  }
  out.error_percent =
      100.0 * (1.0 - static_cast<double>(correct) / static_cast<double>(test.size()));
  return out;
}

// cosine similarity ranking, descending; ties resolve to the lower corpus
// index; zero-norm embeddings score 0 against everything
template <typename S>
std::vector<std::vector<std::pair<std::size_t, double>>> nearest_neighbors(
    const NdArray<S>& queries, const NdArray<S>& corpus, int k) {
  if (queries.shape.size() != 2 || corpus.shape.size() != 2 ||
      queries.shape[1] != corpus.shape[1])
    throw ShapeError("nearest_neighbors: embedding dims disagree");
  std::size_t nq = queries.shape[0], nc = corpus.shape[0], d = queries.shape[1];
  std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), nc);
  auto norm = [d](const S* v) {
    double acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(v[i]) * v[i];
    return std::sqrt(acc);
  };
  std::vector<double> corpus_norm(nc);
  for (std::size_t j = 0; j < nc; ++j) corpus_norm[j] = norm(corpus.data.data() + j * d);

  std::vector<std::vector<std::pair<std::size_t, double>>> out(nq);
  std::vector<std::pair<double, std::size_t>> scored(nc);
  for (std::size_t i = 0; i < nq; ++i) {
    const S* q = queries.data.data() + i * d;
    double qn = norm(q);
    for (std::size_t j = 0; j < nc; ++j) {
      double denom = qn * corpus_norm[j];
      double sim = 0;
      if (denom > 0) {
        double dot = 0;
        const S* c = corpus.data.data() + j * d;
        for (std::size_t x = 0; x < d; ++x) dot += static_cast<double>(q[x]) * c[x];
        sim = dot / denom;
      }
      scored[j] = {sim, j};
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(kk), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    out[i].reserve(kk);
    for (std::size_t j = 0; j < kk; ++j) out[i].emplace_back(scored[j].second, scored[j].first);
  }
  return out;
}

}  // namespace assoc
