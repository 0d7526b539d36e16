#include "assoc/trainer.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "assoc/association.h"
#include "assoc/checkpoint.h"
#include "assoc/optim.h"

namespace assoc {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// independent rng streams per (run seed, role), splitmix64 finalizer
std::uint64_t substream(std::uint64_t seed, std::uint64_t role) {
  std::uint64_t z = seed + (role + 1) * 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// role ids; phase 2 of adaptation adds kPhaseStride
enum Role : std::uint64_t {
  kRoleInit = 0,
  kRoleLabeledPool = 1,
  kRoleLabeledDraw = 2,
  kRoleUnlabeledPool = 3,
  kRoleUnlabeledDraw = 4,
  kRoleAugmentA = 5,
  kRoleAugmentB = 6,
};
constexpr std::uint64_t kPhaseStride = 16;

double now_s() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

struct SplitPair {
  Dataset train, test;
};

SplitPair load_split(const std::string& source, const SyntheticSpec& syn, const IdxPaths& idx,
                     int num_classes) {
  if (source == "synthetic") {
    if (syn.classes != num_classes)
      throw ConfigError("model.num_classes (" + std::to_string(num_classes) +
                        ") must match the synthetic class count (" + std::to_string(syn.classes) +
                        ")");
    return {synth_blobs(syn.classes, syn.train_per_class, syn.dim, syn.spread, syn.seed,
                        syn.rotate_deg),
            synth_blobs(syn.classes, syn.test_per_class, syn.dim, syn.spread, syn.seed + 1,
                        syn.rotate_deg)};
  }
  return {load_idx_dataset(idx.train_images, idx.train_labels, num_classes),
          load_idx_dataset(idx.test_images, idx.test_labels, num_classes)};
}

SplitPair load_data(const DataConfig& d, int num_classes) {
  return load_split(d.source, d.synthetic, d.idx, num_classes);
}

InputShape input_shape_of(const Dataset& ds) {
  return {ds.images.shape[1], ds.images.shape[2], ds.images.shape[3]};
}

// ---- batch production ----

struct StepBatch {
  NdArray<float> a_images;
  std::vector<int> a_labels;
  NdArray<float> b_images;  // empty in supervised mode

  bool has_b() const { return b_images.size() > 0; }
};

// Draws, gathers and augments batches; with queue_capacity > 0 a producer
// thread runs ahead through a bounded queue. The sample/augment streams are
// sequenced identically either way, so the trajectory does not depend on the
// queue capacity.
class BatchPump {
 public:
  BatchPump(const Dataset& labeled, const Dataset* unlabeled, StratifiedSampler labeled_sampler,
            std::unique_ptr<UniformSampler> unlabeled_sampler, const AugmentPolicy& policy,
            std::uint64_t aug_seed_a, std::uint64_t aug_seed_b, long long total_steps,
            int capacity)
      : labeled_(&labeled),
        unlabeled_(unlabeled),
        ls_(std::move(labeled_sampler)),
        us_(std::move(unlabeled_sampler)),
        policy_(policy),
        rng_a_(aug_seed_a),
        rng_b_(aug_seed_b),
        total_(total_steps) {
    if (capacity > 0) {
      queue_ = std::make_unique<BoundedQueue<StepBatch>>(static_cast<std::size_t>(capacity));
      thread_ = std::thread([this] { produce(); });
    }
  }

  ~BatchPump() {
    if (queue_) {
      stop_.store(true);
      queue_->close();
      thread_.join();
    }
  }

  StepBatch next() {
    if (!queue_) return make();
    StepBatch b;
    if (!queue_->pop(b)) {
      if (error_) std::rethrow_exception(error_);
      throw Error("batch producer stopped early");
    }
    return b;
  }

 private:
  void produce() {
    try {
      for (long long i = 0; i < total_ && !stop_.load(); ++i) queue_->push(make());
    } catch (...) {
      error_ = std::current_exception();
      queue_->close();
    }
  }

  StepBatch make() {
    StepBatch b;
    std::vector<std::size_t> ai = ls_.sample_batch();
    b.a_images = gather_images(*labeled_, ai);
    b.a_labels = gather_labels(*labeled_, ai);
    augment(b.a_images, policy_, rng_a_);
    if (us_) {
      std::vector<std::size_t> bi = us_->sample_batch();
      b.b_images = gather_images(*unlabeled_, bi);
      augment(b.b_images, policy_, rng_b_);
    }
    return b;
  }

  const Dataset* labeled_;
  const Dataset* unlabeled_;
  StratifiedSampler ls_;
  std::unique_ptr<UniformSampler> us_;
  AugmentPolicy policy_;
  std::mt19937_64 rng_a_, rng_b_;
  long long total_;
  std::unique_ptr<BoundedQueue<StepBatch>> queue_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::exception_ptr error_;
};

struct SamplerSet {
  std::vector<std::vector<std::size_t>> by_class;
  StratifiedSampler labeled;
  std::unique_ptr<UniformSampler> unlabeled;
  const Dataset* unlabeled_ds = nullptr;
};

// pools are built once here and stay fixed for the phase
SamplerSet make_samplers(const RunConfig& cfg, const Dataset& labeled_ds,
                         const Dataset* unlabeled_corpus, std::uint64_t seed,
                         std::uint64_t role_base,
                         const std::vector<std::vector<std::size_t>>* fixed_pool) {
  SamplerSet set{
      fixed_pool ? *fixed_pool
                 : build_labeled_pool(labeled_ds, cfg.sampler.labeled_pool_size,
                                      cfg.sampler.labeled_per_class,
                                      substream(seed, role_base + kRoleLabeledPool)),
      StratifiedSampler({}, 1, 0),  // placeholder, replaced below
      nullptr, nullptr};
  set.labeled = StratifiedSampler(set.by_class, cfg.sampler.labeled_per_class,
                                  substream(seed, role_base + kRoleLabeledDraw));
  if (unlabeled_corpus) {
    std::vector<std::size_t> pool;
    if (cfg.sampler.unlabeled_source == "labeled_pool") {
      if (cfg.sampler.unlabeled_pool_size >= 0)
        throw ConfigError(
            "sampler.unlabeled_pool_size does not apply when unlabeled_source=labeled_pool");
      if (unlabeled_corpus != &labeled_ds)
        throw ConfigError("sampler.unlabeled_source=labeled_pool requires the unlabeled corpus "
                          "to be the labeled training split");
      for (const auto& c : set.by_class) pool.insert(pool.end(), c.begin(), c.end());
    } else {
      pool = build_unlabeled_pool(unlabeled_corpus->size(), cfg.sampler.unlabeled_pool_size,
                                  substream(seed, role_base + kRoleUnlabeledPool));
    }
    set.unlabeled = std::make_unique<UniformSampler>(
        std::move(pool), cfg.sampler.unlabeled_batch,
        substream(seed, role_base + kRoleUnlabeledDraw));
    set.unlabeled_ds = unlabeled_corpus;
  }
  return set;
}

// ---- artifacts ----

class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }

  void row(long long step, double lw, double lv, double lc, double lt, double cwp,
           const double* test_error) {
    ordered_json j;
    j["step"] = step;
    j["L_walker"] = lw;
    j["L_visit"] = lv;
    j["L_classification"] = lc;
    j["L_total"] = lt;
    j["correct_walk_probability"] = cwp;
    if (test_error) j["test_error_percent"] = *test_error;
    out_ << j.dump() << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

void write_confusion(const fs::path& path, const std::vector<std::vector<long long>>& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << '\n';
  }
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename S>
std::vector<std::pair<std::string, NdArray<float>>> checkpoint_tensors(
    const Parameters<S>& params, const AdamState<S>& adam) {
  std::vector<std::pair<std::string, NdArray<float>>> out;
  out.reserve(params.tensors.size() * 3 + 1);
  for (const auto& [name, t] : params.tensors) out.emplace_back("param." + name, cast_array<float>(t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    out.emplace_back("adam.m." + params.tensors[i].first, cast_array<float>(adam.m[i]));
    out.emplace_back("adam.v." + params.tensors[i].first, cast_array<float>(adam.v[i]));
  }
  out.emplace_back("adam.t", NdArray<float>({1}, {static_cast<float>(adam.t)}));
  return out;
}

template <typename S>
Parameters<S> params_from_checkpoint(const Checkpoint& ck, const ModelSpec& spec) {
  // skeleton fixes the expected names/shapes/order
  Parameters<S> params =
      init_parameters<S>(spec, ck.meta.input, ck.meta.num_classes, /*seed=*/0);
  for (auto& [name, t] : params.tensors) {
    const NdArray<float>* src = ck.find("param." + name);
    if (!src) throw IoError("checkpoint is missing tensor 'param." + name + "'");
    if (!(src->shape == t.shape))
      throw IoError("checkpoint tensor 'param." + name + "' has shape " + shape_str(src->shape) +
                    ", expected " + shape_str(t.shape));
    t = cast_array<S>(*src);
  }
  return params;
}

// ---- the training loop ----

struct PhaseResult {
  double min_err = std::numeric_limits<double>::infinity();
  long long min_step = -1;
  double last_total = 0;
};

template <typename S>
class Loop {
 public:
  Loop(const RunConfig& cfg, const ModelSpec& spec, InputShape in, Parameters<S> params,
       const Dataset& eval_ds, fs::path dir)
      : cfg_(cfg),
        spec_(spec),
        in_(in),
        params_(std::move(params)),
        adam_(make_adam_state(params_, cfg.optim)),
        eval_ds_(&eval_ds),
        dir_(std::move(dir)),
        metrics_(dir_ / "metrics.jsonl") {}

  // runs steps start+1 .. start+count
  PhaseResult phase(long long start, long long count, const LossWeights& weights,
                    BatchPump& pump) {
    PhaseResult res;
    Parameters<S> last_good = params_;
    for (long long i = 1; i <= count; ++i) {
      long long step = start + i;
      StepBatch batch = pump.next();

      Graph<S> g;
      ParamNodes<S> pn = upload_parameters(g, params_);
      NodeId images_a = g.value(to_precision<S>(batch.a_images));
      ForwardResult<S> fa = forward(g, spec_, pn, images_a);
      NodeId l2 = l2_penalty(g, pn);

      double lw = 0, lv = 0, lc = 0, cwp = 0;
      NodeId assoc_total{};
      std::optional<AssociationGraph<S>> ag;
      if (batch.has_b()) {
        NodeId images_b = g.value(to_precision<S>(batch.b_images));
        ForwardResult<S> fb = forward(g, spec_, pn, images_b);
        ag = total_loss(g, fa.embeddings, fb.embeddings, batch.a_labels, fa.logits, weights);
        assoc_total = ag->total;
        lw = static_cast<double>(g.val(ag->walker).data[0]);
        lv = static_cast<double>(g.val(ag->visit).data[0]);
        lc = static_cast<double>(g.val(ag->classification).data[0]);
        cwp = correct_walk_probability(g.val(ag->paba), batch.a_labels);
      } else {
        NodeId cls = classification_loss(g, fa.logits, batch.a_labels);
        lc = static_cast<double>(g.val(cls).data[0]);
        assoc_total = weighted_sum(g, {{cls, weights.classification}});
      }
      NodeId loss = g.add(assoc_total, l2);
      double total = static_cast<double>(g.val(loss).data[0]);
      if (!std::isfinite(total)) {
        save_snapshot(last_good, "checkpoint_last_good.ckpt", step - 1);
        throw Error("non-finite loss at step " + std::to_string(step) +
                    "; last good parameters kept in checkpoint_last_good.ckpt");
      }
      last_good = params_;

      g.backward(loss);
      std::vector<NdArray<S>> grads;
      grads.reserve(pn.nodes.size());
      for (const auto& [name, id] : pn.nodes) grads.push_back(g.grad(id));
      try {
        adam_step(params_, grads, adam_);
      } catch (const Error&) {
        save_snapshot(last_good, "checkpoint_last_good.ckpt", step - 1);
        throw;
      }

      const double* err_ptr = nullptr;
      double err = 0;
      bool do_eval =
          (cfg_.train.eval_every > 0 && step % cfg_.train.eval_every == 0) || i == count;
      if (do_eval) {
        EvalOutcome ev = evaluate(spec_, params_, *eval_ds_, cfg_.model.num_classes);
        err = ev.error_percent;
        err_ptr = &err;
        if (err < best_err_) {
          best_err_ = err;
          write_confusion(dir_ / "confusion.csv", ev.confusion);
        }
        if (err < res.min_err) {
          res.min_err = err;
          res.min_step = step;
        }
      }
      metrics_.row(step, lw, lv, lc, total, cwp, err_ptr);

      if (ag && std::find(cfg_.train.assoc_dump_steps.begin(), cfg_.train.assoc_dump_steps.end(),
                          step) != cfg_.train.assoc_dump_steps.end())
        write_association_dump(dir_ / "assoc" / ("step_" + std::to_string(step)),
                               make_dump(g, *ag, step, batch, weights));
      if (cfg_.train.checkpoint_every > 0 && step % cfg_.train.checkpoint_every == 0)
        save("checkpoint_latest.ckpt", step);
      res.last_total = total;
    }
    metrics_.flush();
    return res;
  }

  Parameters<S>& params() { return params_; }

  void save(const std::string& filename, long long step) {
    save_snapshot(params_, filename, step);
  }

 private:
  void save_snapshot(const Parameters<S>& p, const std::string& filename, long long step) {
    CheckpointMeta meta{render_architecture(spec_), spec_.embedding_dim, cfg_.model.num_classes,
                        in_, step};
    save_checkpoint((dir_ / filename).string(), meta, checkpoint_tensors(p, adam_));
  }

  static AssociationDump make_dump(Graph<S>& g, const AssociationGraph<S>& ag, long long step,
                                   const StepBatch& batch, const LossWeights& w) {
    AssociationDump d;
    d.step = step;
    d.batch_a = batch.a_images.shape[0];
    d.batch_b = batch.b_images.shape[0];
    d.m = cast_array<double>(g.val(ag.m));
    d.pab = cast_array<double>(g.val(ag.pab));
    d.pba = cast_array<double>(g.val(ag.pba));
    d.paba = cast_array<double>(g.val(ag.paba));
    d.pvisit = cast_array<double>(g.val(ag.pvisit));
    d.walker = static_cast<double>(g.val(ag.walker).data[0]);
    d.visit = static_cast<double>(g.val(ag.visit).data[0]);
    d.classification = static_cast<double>(g.val(ag.classification).data[0]);
    d.total = w.walker * d.walker + w.visit * d.visit + w.classification * d.classification;
    return d;
  }

  const RunConfig& cfg_;
  const ModelSpec& spec_;
  InputShape in_;
  Parameters<S> params_;
  AdamState<S> adam_;
  const Dataset* eval_ds_;
  fs::path dir_;
  MetricsWriter metrics_;
  double best_err_ = std::numeric_limits<double>::infinity();
};

template <typename S>
RunStats train_seed(const RunConfig& cfg, const SplitPair& data, std::uint64_t seed,
                    const fs::path& dir) {
  double t0 = now_s();
  fs::create_directories(dir);
  ModelSpec spec = parse_architecture(cfg.model.arch);
  InputShape in = input_shape_of(data.train);
  Parameters<S> params =
      init_parameters<S>(spec, in, cfg.model.num_classes, substream(seed, kRoleInit));
  Loop<S> loop(cfg, spec, in, std::move(params), data.test, dir);

  bool semisup = cfg.train.mode == "semisup";
  SamplerSet set =
      make_samplers(cfg, data.train, semisup ? &data.train : nullptr, seed, 0, nullptr);
  BatchPump pump(data.train, set.unlabeled_ds, std::move(set.labeled), std::move(set.unlabeled),
                 cfg.data.augment, substream(seed, kRoleAugmentA), substream(seed, kRoleAugmentB),
                 cfg.train.max_steps, cfg.sampler.queue_capacity);
  PhaseResult pr = loop.phase(0, cfg.train.max_steps, cfg.loss, pump);
  loop.save("checkpoint_final.ckpt", cfg.train.max_steps);

  RunStats rs;
  rs.seed = seed;
  rs.min_test_error_percent = pr.min_err;
  rs.min_error_step = pr.min_step;
  rs.final_total_loss = pr.last_total;
  rs.wall_time_s = now_s() - t0;

  ordered_json j;
  j["seed"] = seed;
  j["steps"] = cfg.train.max_steps;
  j["min_test_error_percent"] = rs.min_test_error_percent;
  j["min_error_step"] = rs.min_error_step;
  j["final_L_total"] = rs.final_total_loss;
  j["wall_time_s"] = rs.wall_time_s;
  write_json_file(dir / "run_summary.json", j);
  return rs;
}

template <typename S>
TrainOutcome train_run_impl(const RunConfig& cfg) {
  double t0 = now_s();
  SplitPair data = load_data(cfg.data, cfg.model.num_classes);
  if (!data.train.labeled()) throw ConfigError("training requires labels on the train split");
  fs::path out(cfg.train.out_dir);
  fs::create_directories(out);
  write_json_file(out / "effective_config.json", config_to_json(cfg));

  TrainOutcome o;
  std::vector<double> errs;
  for (int i = 0; i < cfg.train.num_seeds; ++i) {
    std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(i);
    fs::path dir = cfg.train.num_seeds == 1 ? out : out / ("seed_" + std::to_string(seed));
    o.runs.push_back(train_seed<S>(cfg, data, seed, dir));
    errs.push_back(o.runs.back().min_test_error_percent);
  }
  o.median_min_error = median_of(errs);
  o.stddev_min_error = sample_stddev(errs);
  o.wall_time_s = now_s() - t0;

  ordered_json j;
  j["seeds"] = ordered_json::array();
  j["min_test_error_percent"] = ordered_json::array();
  for (const RunStats& r : o.runs) {
    j["seeds"].push_back(r.seed);
    j["min_test_error_percent"].push_back(r.min_test_error_percent);
  }
  j["median_min_test_error_percent"] = o.median_min_error;
  j["stddev_min_test_error_percent"] = o.stddev_min_error;
  write_json_file(out / "aggregate.json", j);
  return o;
}

template <typename S>
AdaptStats adapt_seed(const RunConfig& cfg, const SplitPair& source, const SplitPair& target,
                      std::uint64_t seed, const fs::path& dir) {
  double t0 = now_s();
  fs::create_directories(dir);
  ModelSpec spec = parse_architecture(cfg.model.arch);
  InputShape in = input_shape_of(source.train);
  if (!(input_shape_of(target.train) == in))
    throw ConfigError("adapt: source and target input shapes differ");
  Parameters<S> params =
      init_parameters<S>(spec, in, cfg.model.num_classes, substream(seed, kRoleInit));
  Loop<S> loop(cfg, spec, in, std::move(params), target.test, dir);

  // phase 1: semi-supervised on source, evaluated against the target test split
  std::vector<std::vector<std::size_t>> labeled_pool;  // fixed for the whole run
  {
    SamplerSet set = make_samplers(cfg, source.train, &source.train, seed, 0, nullptr);
    labeled_pool = set.by_class;
    BatchPump pump(source.train, set.unlabeled_ds, std::move(set.labeled),
                   std::move(set.unlabeled), cfg.data.augment, substream(seed, kRoleAugmentA),
                   substream(seed, kRoleAugmentB), cfg.adapt.source_steps,
                   cfg.sampler.queue_capacity);
    loop.phase(0, cfg.adapt.source_steps, cfg.loss, pump);
  }
  double source_only =
      evaluate(spec, loop.params(), target.test, cfg.model.num_classes).error_percent;
  loop.save("checkpoint_source.ckpt", cfg.adapt.source_steps);

  // phase 2: same parameters and optimizer state; the unlabeled batches now
  // come from the target train split with labels withheld
  Dataset target_unlabeled = target.train;
  target_unlabeled.labels.clear();
  LossWeights w2 = cfg.loss;
  w2.visit = cfg.adapt.visit_weight;
  PhaseResult p2;
  {
    SamplerSet set =
        make_samplers(cfg, source.train, &target_unlabeled, seed, kPhaseStride, &labeled_pool);
    BatchPump pump(source.train, set.unlabeled_ds, std::move(set.labeled),
                   std::move(set.unlabeled), cfg.data.augment,
                   substream(seed, kPhaseStride + kRoleAugmentA),
                   substream(seed, kPhaseStride + kRoleAugmentB), cfg.train.max_steps,
                   cfg.sampler.queue_capacity);
    p2 = loop.phase(cfg.adapt.source_steps, cfg.train.max_steps, w2, pump);
  }
  loop.save("checkpoint_final.ckpt", cfg.adapt.source_steps + cfg.train.max_steps);

  AdaptStats st;
  st.seed = seed;
  st.source_only_error = source_only;
  st.adapted_error = p2.min_err;

  if (cfg.adapt.run_target_baseline) {
    if (!target.train.labeled())
      throw ConfigError("adapt.run_target_baseline needs labels on the target train split");
    fs::path bdir = dir / "target_only";
    fs::create_directories(bdir);
    Parameters<S> bparams =
        init_parameters<S>(spec, in, cfg.model.num_classes, substream(seed, kRoleInit));
    Loop<S> bloop(cfg, spec, in, std::move(bparams), target.test, bdir);
    SamplerSet set =
        make_samplers(cfg, target.train, nullptr, seed, 2 * kPhaseStride, nullptr);
    BatchPump pump(target.train, nullptr, std::move(set.labeled), nullptr, cfg.data.augment,
                   substream(seed, 2 * kPhaseStride + kRoleAugmentA),
                   substream(seed, 2 * kPhaseStride + kRoleAugmentB), cfg.adapt.source_steps,
                   cfg.sampler.queue_capacity);
    LossWeights wb;
    wb.walker = 0;
    wb.visit = 0;
    wb.classification = cfg.loss.classification;
    PhaseResult pb = bloop.phase(0, cfg.adapt.source_steps, wb, pump);
    bloop.save("checkpoint_final.ckpt", cfg.adapt.source_steps);
    st.target_only_error = pb.min_err;
    double denom = source_only - st.target_only_error;
    st.gap_coverage_percent = denom != 0
                                  ? 100.0 * (source_only - st.adapted_error) / denom
                                  : std::numeric_limits<double>::quiet_NaN();
  } else {
    st.target_only_error = -1;
    st.gap_coverage_percent = std::numeric_limits<double>::quiet_NaN();
  }
  st.wall_time_s = now_s() - t0;

  ordered_json j;
  j["seed"] = seed;
  j["source_steps"] = cfg.adapt.source_steps;
  j["adapt_steps"] = cfg.train.max_steps;
  j["source_only_error_percent"] = st.source_only_error;
  j["adapted_error_percent"] = st.adapted_error;
  j["adapted_min_step"] = p2.min_step;
  if (st.target_only_error >= 0) {
    j["target_only_error_percent"] = st.target_only_error;
    j["gap_coverage_percent"] = st.gap_coverage_percent;
  } else {
    j["target_only_error_percent"] = nullptr;
    j["gap_coverage_percent"] = nullptr;
  }
  j["wall_time_s"] = st.wall_time_s;
  write_json_file(dir / "adapt_summary.json", j);
  return st;
}

template <typename S>
AdaptOutcome adapt_run_impl(const RunConfig& cfg) {
  double t0 = now_s();
  SplitPair source = load_data(cfg.data, cfg.model.num_classes);
  SplitPair target = load_split(cfg.adapt.target.source, cfg.adapt.target.synthetic,
                                cfg.adapt.target.idx, cfg.model.num_classes);
  if (!source.train.labeled()) throw ConfigError("adapt: source train split needs labels");
  if (!target.test.labeled()) throw ConfigError("adapt: target test split needs labels");
  fs::path out(cfg.train.out_dir);
  fs::create_directories(out);
  write_json_file(out / "effective_config.json", config_to_json(cfg));

  AdaptOutcome o;
  std::vector<double> so, ad, to, gap;
  for (int i = 0; i < cfg.train.num_seeds; ++i) {
    std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(i);
    fs::path dir = cfg.train.num_seeds == 1 ? out : out / ("seed_" + std::to_string(seed));
    o.runs.push_back(adapt_seed<S>(cfg, source, target, seed, dir));
    so.push_back(o.runs.back().source_only_error);
    ad.push_back(o.runs.back().adapted_error);
    if (o.runs.back().target_only_error >= 0) {
      to.push_back(o.runs.back().target_only_error);
      if (std::isfinite(o.runs.back().gap_coverage_percent))
        gap.push_back(o.runs.back().gap_coverage_percent);
    }
  }
  o.median_source_only = median_of(so);
  o.median_adapted = median_of(ad);
  o.median_target_only = to.empty() ? -1 : median_of(to);
  o.median_gap_coverage =
      gap.empty() ? std::numeric_limits<double>::quiet_NaN() : median_of(gap);
  o.wall_time_s = now_s() - t0;

  ordered_json j;
  j["median_source_only_error_percent"] = o.median_source_only;
  j["median_adapted_error_percent"] = o.median_adapted;
  if (!to.empty()) {
    j["median_target_only_error_percent"] = o.median_target_only;
    j["median_gap_coverage_percent"] = o.median_gap_coverage;
  } else {
    j["median_target_only_error_percent"] = nullptr;
    j["median_gap_coverage_percent"] = nullptr;
  }
  write_json_file(out / "adapt_aggregate.json", j);
  return o;
}

std::string default_checkpoint(const RunConfig& cfg, const std::string& preferred) {
  if (!preferred.empty()) return preferred;
  return (fs::path(cfg.train.out_dir) / "checkpoint_final.ckpt").string();
}

template <typename S>
void assoc_dump_impl(const RunConfig& cfg) {
  SplitPair data = load_data(cfg.data, cfg.model.num_classes);
  ModelSpec spec = parse_architecture(cfg.model.arch);
  InputShape in = input_shape_of(data.train);
  long long step = 0;
  Parameters<S> params;

  std::string ckpath = cfg.eval.checkpoint;
  if (ckpath.empty()) {
    fs::path cand = fs::path(cfg.train.out_dir) / "checkpoint_final.ckpt";
    if (fs::exists(cand)) ckpath = cand.string();
  }
  if (!ckpath.empty()) {
    Checkpoint ck = load_checkpoint(ckpath);
    spec = parse_architecture(ck.meta.arch);
    if (!(ck.meta.input == in))
      throw ConfigError("checkpoint input shape does not match the configured data");
    params = params_from_checkpoint<S>(ck, spec);
    step = ck.meta.step;
  } else {
    params = init_parameters<S>(spec, in, cfg.model.num_classes,
                                substream(cfg.train.seed, kRoleInit));
  }

  std::uint64_t seed = cfg.train.seed;
  SamplerSet set = make_samplers(cfg, data.train, &data.train, seed, 0, nullptr);
  BatchPump pump(data.train, set.unlabeled_ds, std::move(set.labeled), std::move(set.unlabeled),
                 cfg.data.augment, substream(seed, kRoleAugmentA),
                 substream(seed, kRoleAugmentB), 1, 0);
  StepBatch batch = pump.next();

  Graph<S> g;
  ParamNodes<S> pn = upload_parameters(g, params);
  ForwardResult<S> fa = forward(g, spec, pn, g.value(to_precision<S>(batch.a_images)));
  ForwardResult<S> fb = forward(g, spec, pn, g.value(to_precision<S>(batch.b_images)));
  AssociationGraph<S> ag =
      total_loss(g, fa.embeddings, fb.embeddings, batch.a_labels, fa.logits, cfg.loss);

  AssociationDump d;
  d.step = step;
  d.batch_a = batch.a_images.shape[0];
  d.batch_b = batch.b_images.shape[0];
  d.m = cast_array<double>(g.val(ag.m));
  d.pab = cast_array<double>(g.val(ag.pab));
  d.pba = cast_array<double>(g.val(ag.pba));
  d.paba = cast_array<double>(g.val(ag.paba));
  d.pvisit = cast_array<double>(g.val(ag.pvisit));
  d.walker = static_cast<double>(g.val(ag.walker).data[0]);
  d.visit = static_cast<double>(g.val(ag.visit).data[0]);
  d.classification = static_cast<double>(g.val(ag.classification).data[0]);
  d.total = cfg.loss.walker * d.walker + cfg.loss.visit * d.visit +
            cfg.loss.classification * d.classification;
  write_association_dump(fs::path(cfg.train.out_dir) / "assoc" / ("step_" + std::to_string(step)),
                         d);
}

}  // namespace

TrainOutcome train_run(const RunConfig& cfg) {
  if (cfg.train.mode == "adapt")
    throw ConfigError("train.mode=adapt must be run through the adapt command");
  return cfg.train.precision == "f64" ? train_run_impl<double>(cfg) : train_run_impl<float>(cfg);
}

AdaptOutcome adapt_run(const RunConfig& cfg) {
  return cfg.train.precision == "f64" ? adapt_run_impl<double>(cfg) : adapt_run_impl<float>(cfg);
}

EvalOutcome evaluate_run(const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(default_checkpoint(cfg, cfg.eval.checkpoint));
  ModelSpec spec = parse_architecture(ck.meta.arch);
  Parameters<float> params = params_from_checkpoint<float>(ck, spec);
  SplitPair data = load_data(cfg.data, ck.meta.num_classes);
  if (!(input_shape_of(data.test) == ck.meta.input))
    throw ConfigError("checkpoint input shape does not match the configured data");
  return evaluate(spec, params, data.test, ck.meta.num_classes);
}

std::vector<SweepRow> sweep_visit_run(const RunConfig& cfg, const std::vector<double>& weights,
                                      int parallel) {
  if (weights.empty()) throw ConfigError("sweep: need at least one visit weight");
  fs::path out(cfg.train.out_dir);
  fs::create_directories(out);
  std::vector<SweepRow> rows(weights.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < weights.size(); i = next.fetch_add(1)) {
      try {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", weights[i]);
        RunConfig sub = cfg;
        sub.loss.visit = weights[i];
        sub.train.out_dir = (out / (std::string("visit_") + buf)).string();
        TrainOutcome to = train_run(sub);
        rows[i] = {weights[i], to.median_min_error, to.stddev_min_error};
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  int workers = std::max(1, std::min<int>(parallel, static_cast<int>(weights.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::ofstream csv(out / "sweep_visit.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "sweep_visit.csv").string());
  csv << "visit_weight,median_min_error_percent,stddev_min_error_percent\n";
  char buf[120];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", r.visit_weight, r.median_min_error,
                  r.stddev_min_error);
    csv << buf;
  }
  return rows;
}

void assoc_dump_run(const RunConfig& cfg) {
  if (cfg.train.precision == "f64")
    assoc_dump_impl<double>(cfg);
  else
    assoc_dump_impl<float>(cfg);
}

void nearest_neighbors_run(const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(default_checkpoint(cfg, cfg.nn.checkpoint));
  ModelSpec spec = parse_architecture(ck.meta.arch);
  Parameters<float> params = params_from_checkpoint<float>(ck, spec);
  SplitPair data = load_data(cfg.data, ck.meta.num_classes);
  if (!(input_shape_of(data.test) == ck.meta.input))
    throw ConfigError("checkpoint input shape does not match the configured data");

  Dataset queries = data.test;
  if (cfg.nn.max_queries > 0 &&
      static_cast<std::size_t>(cfg.nn.max_queries) < queries.size()) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.nn.max_queries));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    queries.images = gather_images(data.test, idx);
    if (data.test.labeled()) queries.labels = gather_labels(data.test, idx);
  }
  NdArray<float> q = embed_dataset(spec, params, queries);
  NdArray<float> c = embed_dataset(spec, params, data.train);
  auto ranks = nearest_neighbors(q, c, cfg.nn.k);

  fs::path out(cfg.train.out_dir);
  fs::create_directories(out);
  std::ofstream csv(out / "nn.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out / "nn.csv").string());
  csv << "query,rank,corpus_index,cosine_similarity\n";
  char buf[96];
  for (std::size_t i = 0; i < ranks.size(); ++i)
    for (std::size_t r = 0; r < ranks[i].size(); ++r) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.9g\n", i, r + 1, ranks[i][r].first,
                    ranks[i][r].second);
      csv << buf;
    }
}

}  // namespace assoc
