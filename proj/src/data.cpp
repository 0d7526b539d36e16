#include "assoc/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <filesystem>
#include <fstream>

namespace assoc {

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxData parse_idx(const std::uint8_t* data, std::size_t len) {
  if (len < 4) throw IoError("IDX: file shorter than the 4-byte magic");
  if (data[0] != 0 || data[1] != 0) throw IoError("IDX: bad magic, first two bytes must be zero");
  if (data[2] != 0x08)
    throw IoError("IDX: unsupported type code 0x" + std::to_string(data[2]) +
                  ", only unsigned byte (0x08) is handled");
  std::size_t rank = data[3];
  if (rank == 0) throw IoError("IDX: rank 0 header");
  if (len < 4 + 4 * rank) throw IoError("IDX: truncated dimension header");
  IdxData idx;
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    std::uint32_t e = read_be32(data + 4 + 4 * d);
    idx.dims.push_back(e);
    total *= e;
  }
  std::size_t expect = 4 + 4 * rank + total;
  if (len < expect)
    throw IoError("IDX: truncated payload, expected " + std::to_string(expect) + " bytes, got " +
                  std::to_string(len));
  if (len > expect)
    throw IoError("IDX: trailing bytes, expected " + std::to_string(expect) + " bytes, got " +
                  std::to_string(len));
  idx.bytes.assign(data + 4 + 4 * rank, data + expect);
  return idx;
}

std::vector<std::uint8_t> serialize_idx(const IdxData& idx) {
  if (idx.dims.empty() || idx.dims.size() > 255) throw IoError("IDX: rank must be in [1,255]");
  std::size_t total = 1;
  for (std::size_t e : idx.dims) total *= e;
  if (total != idx.bytes.size())
    throw IoError("IDX: dims cover " + std::to_string(total) + " bytes but payload has " +
                  std::to_string(idx.bytes.size()));
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * idx.dims.size() + idx.bytes.size());
  out.push_back(0);
  out.push_back(0);
  out.push_back(0x08);
  out.push_back(static_cast<std::uint8_t>(idx.dims.size()));
  for (std::size_t e : idx.dims) write_be32(out, static_cast<std::uint32_t>(e));
  out.insert(out.end(), idx.bytes.begin(), idx.bytes.end());
  return out;
}

IdxData read_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes.data(), bytes.size());
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_idx_file(const std::string& path, const IdxData& idx) {
  std::vector<std::uint8_t> bytes = serialize_idx(idx);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

Dataset dataset_from_idx(const IdxData& images, const IdxData* labels, int class_count) {
  if (images.dims.size() != 3)
    throw IoError("IDX images: expected rank 3 [n,h,w], got rank " +
                  std::to_string(images.dims.size()));
  std::size_t n = images.dims[0], h = images.dims[1], w = images.dims[2];
  Dataset ds;
  ds.class_count = class_count;
  ds.images = NdArray<float>({n, h, w, 1});
  for (std::size_t i = 0; i < images.bytes.size(); ++i)
    ds.images.data[i] = normalize_pixel(images.bytes[i]);
  if (labels) {
    if (labels->dims.size() != 1)
      throw IoError("IDX labels: expected rank 1, got rank " +
                    std::to_string(labels->dims.size()));
    if (labels->dims[0] != n)
      throw IoError("IDX labels: " + std::to_string(labels->dims[0]) + " labels for " +
                    std::to_string(n) + " images");
    ds.labels.reserve(n);
    for (std::uint8_t b : labels->bytes) {
      if (b >= class_count)
        throw IoError("IDX labels: label " + std::to_string(b) + " out of range [0," +
                      std::to_string(class_count) + ")");
      ds.labels.push_back(b);
    }
  }
  return ds;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int class_count) {
  IdxData images = read_idx_file(images_path);
  if (labels_path.empty()) return dataset_from_idx(images, nullptr, class_count);
  IdxData labels = read_idx_file(labels_path);
  return dataset_from_idx(images, &labels, class_count);
}

NdArray<double> blob_means(int classes, int dim) {
  if (classes < 2) throw Error("blob_means: need at least 2 classes");
  if (dim < 1) throw Error("blob_means: need at least 1 dimension");
  NdArray<double> means({static_cast<std::size_t>(classes), static_cast<std::size_t>(dim)});
  if (dim >= classes - 1) {
    // regular simplex: project the standard basis of R^classes onto the
    // hyperplane orthogonal to 1, express in an orthonormal basis, scale to
    // unit pairwise distance
    int k = classes;
    std::vector<std::vector<double>> u(k, std::vector<double>(k, -1.0 / k));
    for (int i = 0; i < k; ++i) u[i][i] += 1.0;
    std::vector<std::vector<double>> basis;  // orthonormal, spans the u_i
    for (int i = 0; i < k - 1; ++i) {
      std::vector<double> v = u[i];
      for (const auto& b : basis) {
        double dot = 0;
        for (int j = 0; j < k; ++j) dot += v[j] * b[j];
        for (int j = 0; j < k; ++j) v[j] -= dot * b[j];
      }
      double norm = 0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
    double scale = 1.0 / std::sqrt(2.0);  // |e_i - e_j| = sqrt(2) -> 1
    for (int c = 0; c < k; ++c)
      for (int d = 0; d < k - 1; ++d) {
        double dot = 0;
        for (int j = 0; j < k; ++j) dot += u[c][j] * basis[d][j];
        means.at(c, d) = dot * scale;
      }
  } else if (dim >= 2) {
    // unit pairwise distance is infeasible below K-1 dimensions; fall back to
    // a regular polygon with circumradius sqrt(2) (side 2 for K=4), widening
    // for large K so sides never drop below 1
    double r = std::max(std::numbers::sqrt2, 0.5 / std::sin(std::numbers::pi / classes));
    for (int c = 0; c < classes; ++c) {
      double a = 2.0 * std::numbers::pi * c / classes;
      means.at(c, 0) = r * std::cos(a);
      means.at(c, 1) = r * std::sin(a);
    }
  } else {
    // unit-spaced points on a line, centered
    for (int c = 0; c < classes; ++c) means.at(c, 0) = c - (classes - 1) / 2.0;
  }
  return means;
}

Dataset synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed,
                    double rotate_deg) {
  if (per_class < 1) throw Error("synth_blobs: per_class must be >= 1");
  if (!(spread >= 0)) throw Error("synth_blobs: spread must be >= 0");
  NdArray<double> means = blob_means(classes, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double theta = rotate_deg * std::numbers::pi / 180.0;
  double ct = std::cos(theta), st = std::sin(theta);

  std::size_t n = static_cast<std::size_t>(classes) * per_class;
  Dataset ds;
  ds.class_count = classes;
  ds.images = NdArray<float>({n, 1, 1, static_cast<std::size_t>(dim)});
  ds.labels.reserve(n);
  std::vector<double> pt(dim);
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int d = 0; d < dim; ++d) pt[d] = means.at(c, d) + normal(rng) * spread;
      if (rotate_deg != 0 && dim >= 2) {
        double x = pt[0], y = pt[1];
        pt[0] = x * ct - y * st;
        pt[1] = x * st + y * ct;
      }
      for (int d = 0; d < dim; ++d)
        ds.images.data[row * dim + d] = static_cast<float>(pt[d]);
      ds.labels.push_back(c);
    }
  return ds;
}

std::vector<std::vector<std::size_t>> build_labeled_pool(const Dataset& ds, long long pool_size,
                                                         int min_per_class, std::uint64_t seed) {
  if (!ds.labeled()) throw Error("labeled sampling requires a labeled dataset");
  int k = ds.class_count;
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) by_class[ds.labels[i]].push_back(i);

  if (pool_size >= 0) {
    if (pool_size % k != 0)
      throw ConfigError("labeled pool size " + std::to_string(pool_size) +
                        " is not divisible by the class count " + std::to_string(k));
    std::size_t take = static_cast<std::size_t>(pool_size / k);
    std::mt19937_64 rng(seed);
    for (int c = 0; c < k; ++c) {
      auto& pool = by_class[c];
      if (pool.size() < take)
        throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                          " labeled samples, pool needs " + std::to_string(take));
      for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      pool.resize(take);
    }
  }
  for (int c = 0; c < k; ++c)
    if (by_class[c].size() < static_cast<std::size_t>(min_per_class))
      throw ConfigError("class " + std::to_string(c) + " has only " +
                        std::to_string(by_class[c].size()) + " labeled samples in the pool, " +
                        "need " + std::to_string(min_per_class) + " per batch");
  return by_class;
}

std::vector<std::size_t> build_unlabeled_pool(std::size_t corpus_size, long long pool_size,
                                              std::uint64_t seed) {
  if (corpus_size == 0) throw Error("unlabeled pool: empty corpus");
  if (pool_size == 0)
    throw ConfigError("unlabeled pool size 0 is not a run mode; use mode=supervised instead");
  std::vector<std::size_t> all(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) all[i] = i;
  if (pool_size < 0) return all;
  if (static_cast<std::size_t>(pool_size) > corpus_size)
    throw ConfigError("unlabeled pool size " + std::to_string(pool_size) +
                      " exceeds the corpus size " + std::to_string(corpus_size));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < static_cast<std::size_t>(pool_size); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(static_cast<std::size_t>(pool_size));
  return all;
}

StratifiedSampler::StratifiedSampler(std::vector<std::vector<std::size_t>> by_class, int per_class,
                                     std::uint64_t seed)
    : by_class_(std::move(by_class)), per_class_(per_class), rng_(seed) {
  if (per_class_ < 1) throw ConfigError("labeled_per_class must be >= 1");
  for (std::size_t c = 0; c < by_class_.size(); ++c)
    if (by_class_[c].size() < static_cast<std::size_t>(per_class_))
      throw ConfigError("class " + std::to_string(c) + " pool has " +
                        std::to_string(by_class_[c].size()) + " samples, need " +
                        std::to_string(per_class_));
}

std::size_t StratifiedSampler::pool_size() const {
  std::size_t n = 0;
  for (const auto& c : by_class_) n += c.size();
  return n;
}

std::vector<std::size_t> StratifiedSampler::sample_batch() {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size()));
  for (auto& pool : by_class_) {
    // partial Fisher-Yates: distinct draws within the class
    for (int i = 0; i < per_class_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng_)]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

UniformSampler::UniformSampler(std::vector<std::size_t> pool, int batch, std::uint64_t seed)
    : pool_(std::move(pool)), batch_(batch), rng_(seed) {
  if (pool_.empty()) throw Error("UniformSampler: empty pool");
  if (batch_ < 1) throw ConfigError("unlabeled batch size must be >= 1");
  if (static_cast<std::size_t>(batch_) > pool_.size())
    throw ConfigError("unlabeled batch size " + std::to_string(batch_) +
                      " exceeds the pool size " + std::to_string(pool_.size()));
}

std::vector<std::size_t> UniformSampler::sample_batch() {
  for (int i = 0; i < batch_; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                    pool_.size() - 1);
    std::swap(pool_[static_cast<std::size_t>(i)], pool_[pick(rng_)]);
  }
  return std::vector<std::size_t>(pool_.begin(), pool_.begin() + batch_);
}

NdArray<float> gather_images(const Dataset& ds, const std::vector<std::size_t>& idx) {
  const Shape& s = ds.images.shape;
  std::size_t stride = s[1] * s[2] * s[3];
  NdArray<float> out({idx.size(), s[1], s[2], s[3]});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.data.data() + i * stride, ds.images.data.data() + idx[i] * stride,
                stride * sizeof(float));
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

NdArray<float> shift_image(const NdArray<float>& img, int dx, int dy) {
  std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
  NdArray<float> out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      long long sy = static_cast<long long>(y) - dy;
      long long sx = static_cast<long long>(x) - dx;
      if (sy < 0 || sy >= static_cast<long long>(h) || sx < 0 || sx >= static_cast<long long>(w))
        continue;  // zero fill
      for (std::size_t ch = 0; ch < c; ++ch)
        out.data[(y * w + x) * c + ch] = img.data[(static_cast<std::size_t>(sy) * w +
                                                   static_cast<std::size_t>(sx)) * c + ch];
    }
  return out;
}

NdArray<float> rotate_image(const NdArray<float>& img, double deg) {
  std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
  NdArray<float> out({h, w, c});
  double theta = deg * std::numbers::pi / 180.0;
  double ct = std::cos(theta), st = std::sin(theta);
  double cy = (static_cast<double>(h) - 1) / 2.0, cx = (static_cast<double>(w) - 1) / 2.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // inverse-rotate the destination coordinate into the source image
      double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
      long long sy = std::llround(cy + (st * rx + ct * ry));
      long long sx = std::llround(cx + (ct * rx - st * ry));
      if (sy < 0 || sy >= static_cast<long long>(h) || sx < 0 || sx >= static_cast<long long>(w))
        continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        out.data[(y * w + x) * c + ch] = img.data[(static_cast<std::size_t>(sy) * w +
                                                   static_cast<std::size_t>(sx)) * c + ch];
    }
  return out;
}

void augment(NdArray<float>& images, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (!policy.enabled) return;
  std::size_t b = images.shape[0], h = images.shape[1], w = images.shape[2], c = images.shape[3];
  std::size_t stride = h * w * c;
  NdArray<float> one({h, w, c});
  for (std::size_t i = 0; i < b; ++i) {
    std::memcpy(one.data.data(), images.data.data() + i * stride, stride * sizeof(float));
    if (policy.max_shift > 0) {
      std::uniform_int_distribution<int> d(-policy.max_shift, policy.max_shift);
      int dx = d(rng), dy = d(rng);
      if (dx != 0 || dy != 0) one = shift_image(one, dx, dy);
    }
    if (policy.max_rotate_deg > 0) {
      std::uniform_real_distribution<double> d(-policy.max_rotate_deg, policy.max_rotate_deg);
      double deg = d(rng);
      if (deg != 0) one = rotate_image(one, deg);
    }
    if (policy.noise_sigma > 0) {
      std::normal_distribution<double> d(0.0, policy.noise_sigma);
      for (float& v : one.data) v = static_cast<float>(v + d(rng));
    }
    for (float& v : one.data) v = std::clamp(v, -1.0f, 1.0f);
    std::memcpy(images.data.data() + i * stride, one.data.data(), stride * sizeof(float));
  }
}

}  // namespace assoc
