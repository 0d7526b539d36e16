#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "assoc/array.h"
#include "assoc/error.h"

namespace assoc {

// images are [n,h,w,c] with values normalized to p/127.5 - 1
struct Dataset {
  NdArray<float> images;
  std::vector<int> labels;  // empty for unlabeled data
  int class_count = 0;

  std::size_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  bool labeled() const { return !labels.empty(); }
};

inline float normalize_pixel(std::uint8_t p) { return static_cast<float>(p) / 127.5f - 1.0f; }

// ---- IDX files (unsigned byte payloads only) ----

struct IdxData {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxData parse_idx(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> serialize_idx(const IdxData& idx);
IdxData read_idx_file(const std::string& path);
void write_idx_file(const std::string& path, const IdxData& idx);

// images rank 3 [n,h,w]; labels (optional) rank 1 of length n
Dataset dataset_from_idx(const IdxData& images, const IdxData* labels, int class_count);
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int class_count);

// ---- synthetic blobs ----

// class means with unit separation: a regular simplex when dim >= classes-1
// (unit pairwise distance), a regular polygon with unit sides when dim >= 2,
// a unit-spaced line for dim == 1; centered at the origin
NdArray<double> blob_means(int classes, int dim);

// isotropic Gaussian blobs as [n,1,1,dim] "images", class-major order;
// rotate_deg spins the first two dimensions about the origin
Dataset synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed,
                    double rotate_deg = 0.0);

// ---- batch sampling ----

// per-class index pools; pool_size < 0 keeps all labeled data, otherwise
// pool_size/classes samples are drawn per class (pool_size must divide evenly)
std::vector<std::vector<std::size_t>> build_labeled_pool(const Dataset& ds, long long pool_size,
                                                         int min_per_class, std::uint64_t seed);

// uniform subset of [0, corpus_size); pool_size < 0 keeps everything
std::vector<std::size_t> build_unlabeled_pool(std::size_t corpus_size, long long pool_size,
                                              std::uint64_t seed);

// draws labeled_per_class distinct indices per class, class-major order
class StratifiedSampler {
 public:
  StratifiedSampler(std::vector<std::vector<std::size_t>> by_class, int per_class,
                    std::uint64_t seed);
  std::vector<std::size_t> sample_batch();
  std::size_t pool_size() const;
  int batch_size() const { return per_class_ * static_cast<int>(by_class_.size()); }

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  int per_class_;
  std::mt19937_64 rng_;
};

// draws batch distinct indices from a fixed pool
class UniformSampler {
 public:
  UniformSampler(std::vector<std::size_t> pool, int batch, std::uint64_t seed);
  std::vector<std::size_t> sample_batch();
  std::size_t pool_size() const { return pool_.size(); }

 private:
  std::vector<std::size_t> pool_;
  int batch_;
  std::mt19937_64 rng_;
};

// copies the given rows into a fresh batch tensor
NdArray<float> gather_images(const Dataset& ds, const std::vector<std::size_t>& idx);
std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx);

// ---- augmentation ----

struct AugmentPolicy {
  bool enabled = false;
  int max_shift = 2;           // +/- pixels, zero fill
  double max_rotate_deg = 0;   // +/- degrees, nearest neighbor
  double noise_sigma = 0;      // Gaussian, applied after the geometry
};

// shift +dx columns / +dy rows, vacated pixels zero-filled
NdArray<float> shift_image(const NdArray<float>& img, int dx, int dy);
// rotate about the image center, nearest-neighbor lookup, zero fill
NdArray<float> rotate_image(const NdArray<float>& img, double deg);

// applies the policy in place to a batch [b,h,w,c]; disabled policies leave
// the batch bit-identical and consume no randomness
void augment(NdArray<float>& images, const AugmentPolicy& policy, std::mt19937_64& rng);

// ---- producer/consumer plumbing ----

// blocking bounded queue; capacity must be >= 1
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw Error("BoundedQueue: capacity must be >= 1");
  }

  void push(T v) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return;  // producer told to stop; drop
    q_.push_back(std::move(v));
    not_empty_.notify_one();
  }

  // false once closed and drained
  bool pop(T& out) {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return false;
    out = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return true;
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

}  // namespace assoc
