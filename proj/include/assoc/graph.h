#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "assoc/array.h"
#include "assoc/detail/gemm.h"
#include "assoc/detail/kernels.h"
#include "assoc/error.h"

namespace assoc {

// handle into a Graph's tape
struct NodeId {
  std::uint32_t idx = 0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kTranspose,
  kSoftmaxRows,
  kElu,
  kConv2d,
  kMaxPool2d,
  kDense,
  kAdd,
  kMul,
  kScale,
  kLogClamped,
  kSum,
  kMeanOverRows,
  kReshape,
  kBiasAdd,
  kSoftmaxCrossEntropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kElu: return "elu";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool2d: return "maxpool2d";
    case Op::kDense: return "dense";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kLogClamped: return "log_clamped";
    case Op::kSum: return "sum";
    case Op::kMeanOverRows: return "mean_over_rows";
    case Op::kReshape: return "reshape";
    case Op::kBiasAdd: return "bias_add";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

// Reverse-mode tape over dense row-major arrays. Values are computed eagerly
// while the graph is recorded; backward() walks the tape once in reverse and
// accumulates adjoints only into nodes that can reach a parameter. S selects
// working precision: float for training, double for verification.
template <typename S>
class Graph {
  static constexpr std::uint32_t kNone = 0xffffffffu;

  struct Node {
    Op op = Op::kLeaf;
    std::uint32_t in0 = kNone;
    std::uint32_t in1 = kNone;
    std::uint32_t in2 = kNone;  // dense bias
    bool needs_grad = false;
    NdArray<S> val;
    NdArray<S> grad;  // allocated lazily during backward
    // op attributes
    S scalar = S(0);       // scale factor / log floor
    int k = 0;             // conv & pool window
    int stride = 1;
    int pad_top = 0, pad_left = 0;
    Shape in_shape;                     // reshape: original input shape
    std::vector<int> labels;            // softmax_cross_entropy
    std::vector<std::uint32_t> argmax;  // maxpool winners, flat input offsets
    NdArray<S> saved;                   // conv: im2col patches; sce: softmax
  };

 public:
  NodeId value(NdArray<S> v) { return push_leaf(std::move(v), false); }
  NodeId parameter(NdArray<S> v) { return push_leaf(std::move(v), true); }

  NodeId matmul(NodeId a, NodeId b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (val(a).shape[1] != val(b).shape[0])
      throw ShapeError(std::string("matmul: inner extents disagree, ") + shape_str(val(a).shape) +
                       " x " + shape_str(val(b).shape));
    Node n;
    n.op = Op::kMatmul;
    n.in0 = a.idx;
    n.in1 = b.idx;
    n.val = NdArray<S>::zeros({val(a).shape[0], val(b).shape[1]});
    return push(std::move(n));
  }

  NodeId transpose(NodeId a) {
    require_rank(a, 2, "transpose");
    Node n;
    n.op = Op::kTranspose;
    n.in0 = a.idx;
    n.val = NdArray<S>::zeros({val(a).shape[1], val(a).shape[0]});
    return push(std::move(n));
  }

  NodeId softmax_rows(NodeId a) {
    require_rank(a, 2, "softmax_rows");
    Node n;
    n.op = Op::kSoftmaxRows;
    n.in0 = a.idx;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  NodeId elu(NodeId a) {
    Node n;
    n.op = Op::kElu;
    n.in0 = a.idx;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  // x [b,h,w,cin], kernel [k,k,cin,cout]; SAME padding, cross-correlation
  NodeId conv2d(NodeId x, NodeId kernel, int stride) {
    require_rank(x, 4, "conv2d");
    require_rank(kernel, 4, "conv2d");
    const Shape& xs = val(x).shape;
    const Shape& ks = val(kernel).shape;
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (ks[0] != ks[1]) throw ShapeError("conv2d: kernel must be square, got " + shape_str(ks));
    if (ks[2] != xs[3])
      throw ShapeError("conv2d: input has " + std::to_string(xs[3]) + " channels, kernel expects " +
                       std::to_string(ks[2]));
    Node n;
    n.op = Op::kConv2d;
    n.in0 = x.idx;
    n.in1 = kernel.idx;
    n.k = static_cast<int>(ks[0]);
    n.stride = stride;
    auto [oh, pt] = same_dim(xs[1], n.k, stride);
    auto [ow, pl] = same_dim(xs[2], n.k, stride);
    n.pad_top = pt;
    n.pad_left = pl;
    n.val = NdArray<S>::zeros({xs[0], oh, ow, ks[3]});
    return push(std::move(n));
  }

  // x [b,h,w,c]; SAME padding with windows clipped to the input
  NodeId maxpool2d(NodeId x, int k, int stride) {
    require_rank(x, 4, "maxpool2d");
    const Shape& xs = val(x).shape;
    if (k < 1) throw Error("maxpool2d: window must be >= 1");
    if (stride < 1) throw Error("maxpool2d: stride must be >= 1");
    if (xs[1] < static_cast<std::size_t>(k) || xs[2] < static_cast<std::size_t>(k))
      throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds spatial extents of " +
                       shape_str(xs));
    Node n;
    n.op = Op::kMaxPool2d;
    n.in0 = x.idx;
    n.k = k;
    n.stride = stride;
    auto [oh, pt] = same_dim(xs[1], k, stride);
    auto [ow, pl] = same_dim(xs[2], k, stride);
    n.pad_top = pt;
    n.pad_left = pl;
    n.val = NdArray<S>::zeros({xs[0], oh, ow, xs[3]});
    return push(std::move(n));
  }

  // x [b,n] * w [n,m] + bias [m]
  NodeId dense(NodeId x, NodeId w, NodeId bias) {
    require_rank(x, 2, "dense");
    require_rank(w, 2, "dense");
    require_rank(bias, 1, "dense");
    if (val(x).shape[1] != val(w).shape[0] || val(w).shape[1] != val(bias).shape[0])
      throw ShapeError("dense: incompatible shapes " + shape_str(val(x).shape) + " x " +
                       shape_str(val(w).shape) + " + " + shape_str(val(bias).shape));
    Node n;
    n.op = Op::kDense;
    n.in0 = x.idx;
    n.in1 = w.idx;
    n.in2 = bias.idx;
    n.val = NdArray<S>::zeros({val(x).shape[0], val(w).shape[1]});
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    require_same_shape(a, b, "add");
    Node n;
    n.op = Op::kAdd;
    n.in0 = a.idx;
    n.in1 = b.idx;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  NodeId mul(NodeId a, NodeId b) {
    require_same_shape(a, b, "mul");
    Node n;
    n.op = Op::kMul;
    n.in0 = a.idx;
    n.in1 = b.idx;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  NodeId scale(NodeId a, S factor) {
    Node n;
    n.op = Op::kScale;
    n.in0 = a.idx;
    n.scalar = factor;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  // log(max(x, floor)); gradient is 0 where the clamp is active
  NodeId log_clamped(NodeId a, S floor) {
    if (!(floor > S(0))) throw Error("log_clamped: floor must be positive");
    Node n;
    n.op = Op::kLogClamped;
    n.in0 = a.idx;
    n.scalar = floor;
    n.val = NdArray<S>::zeros(val(a).shape);
    return push(std::move(n));
  }

  NodeId sum(NodeId a) {
    Node n;
    n.op = Op::kSum;
    n.in0 = a.idx;
    n.val = NdArray<S>::zeros({1});
    return push(std::move(n));
  }

  // [r,c] -> [c]
  NodeId mean_over_rows(NodeId a) {
    require_rank(a, 2, "mean_over_rows");
    Node n;
    n.op = Op::kMeanOverRows;
    n.in0 = a.idx;
    n.val = NdArray<S>::zeros({val(a).shape[1]});
    return push(std::move(n));
  }

  NodeId reshape(NodeId a, Shape target) {
    if (numel(target) != val(a).size())
      throw ShapeError("reshape: cannot view " + shape_str(val(a).shape) + " as " +
                       shape_str(target));
    Node n;
    n.op = Op::kReshape;
    n.in0 = a.idx;
    n.in_shape = val(a).shape;
    n.val = NdArray<S>::zeros(std::move(target));
    return push(std::move(n));
  }

  NodeId bias_add(NodeId x, NodeId bias) {
    require_rank(bias, 1, "bias_add");
    const Shape& xs = val(x).shape;
    if (xs.empty() || xs.back() != val(bias).shape[0])
      throw ShapeError("bias_add: " + shape_str(xs) + " vs bias " + shape_str(val(bias).shape));
    Node n;
    n.op = Op::kBiasAdd;
    n.in0 = x.idx;
    n.in1 = bias.idx;
    n.val = NdArray<S>::zeros(xs);
    return push(std::move(n));
  }

  // mean over rows of softmax cross-entropy against integer labels
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const Shape& ls = val(logits).shape;
    if (labels.size() != ls[0])
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(ls[0]) + " rows");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= ls[1])
        throw Error("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                    std::to_string(ls[1]) + ")");
    Node n;
    n.op = Op::kSoftmaxCrossEntropy;
    n.in0 = logits.idx;
    n.labels = std::move(labels);
    n.val = NdArray<S>::zeros({1});
    return push(std::move(n));
  }

  const NdArray<S>& val(NodeId id) const { return nodes_.at(id.idx).val; }

  // adjoint of a node after backward(); zeros if the node was unreachable
  const NdArray<S>& grad(NodeId id) {
    Node& n = nodes_.at(id.idx);
    if (n.grad.size() == 0) n.grad = NdArray<S>::zeros(n.val.shape);
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

  // replay the tape: recompute every non-leaf value in recording order
  void recompute() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op != Op::kLeaf) compute(nodes_[i]);
  }

  void backward(NodeId loss) {
    Node& top = nodes_.at(loss.idx);
    if (top.val.size() != 1)
      throw Error(std::string("backward: loss must be scalar, got ") + shape_str(top.val.shape));
    for (Node& n : nodes_) n.grad = NdArray<S>();
    if (!top.needs_grad) return;  // no parameter reachable
    top.grad = NdArray<S>::full({1}, S(1));
    for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || n.op == Op::kLeaf) continue;
      backprop(n);
    }
  }

 private:
  std::vector<Node> nodes_;
  bool check_finite_ = false;

  NodeId push_leaf(NdArray<S> v, bool param) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = param;
    if (check_finite_) check_node(n);
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  NodeId push(Node n) {
    n.needs_grad = wants(n.in0) || wants(n.in1) || wants(n.in2);
    nodes_.push_back(std::move(n));
    compute(nodes_.back());
    if (check_finite_) check_node(nodes_.back());
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool wants(std::uint32_t i) const { return i != kNone && nodes_[i].needs_grad; }

  void require_rank(NodeId id, std::size_t rank, const char* who) const {
    if (val(id).shape.size() != rank)
      throw ShapeError(std::string(who) + ": expected rank-" + std::to_string(rank) +
                       " operand, got " + shape_str(val(id).shape));
  }

  void require_same_shape(NodeId a, NodeId b, const char* who) const {
    if (!(val(a).shape == val(b).shape))
      throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(val(a).shape) + " vs " +
                       shape_str(val(b).shape));
  }

  void check_node(const Node& n) const {
    for (S v : n.val.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw Error(std::string("non-finite value produced by ") + op_name(n.op));
  }

  // SAME padding: output extent and leading pad for one spatial dimension
  static std::pair<std::size_t, int> same_dim(std::size_t in, int k, int stride) {
    std::size_t out = (in + stride - 1) / stride;
    long long pad = static_cast<long long>(out - 1) * stride + k - static_cast<long long>(in);
    if (pad < 0) pad = 0;
    return {out, static_cast<int>(pad / 2)};
  }

  NdArray<S>& grad_buf(std::uint32_t i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = NdArray<S>::zeros(n.val.shape);
    return n.grad;
  }

  void compute(Node& n) {
    switch (n.op) {
      case Op::kLeaf: break;
      case Op::kMatmul: {
        const NdArray<S>& a = nodes_[n.in0].val;
        const NdArray<S>& b = nodes_[n.in1].val;
        detail::gemm(false, false, a.shape[0], b.shape[1], a.shape[1], S(1), a.data.data(),
                     b.data.data(), S(0), n.val.data.data());
        break;
      }
      case Op::kTranspose: {
        const NdArray<S>& a = nodes_[n.in0].val;
        std::size_t r = a.shape[0], c = a.shape[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) n.val.data[j * r + i] = a.data[i * c + j];
        break;
      }
      case Op::kSoftmaxRows: {
        const NdArray<S>& a = nodes_[n.in0].val;
        std::size_t r = a.shape[0], c = a.shape[1];
        for (std::size_t i = 0; i < r; ++i) {
          const S* row = a.data.data() + i * c;
          S* out = n.val.data.data() + i * c;
          S m = row[0];
          for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
          double denom = 0;
          for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - m);
            denom += static_cast<double>(out[j]);
          }
          S inv = static_cast<S>(1.0 / denom);
          for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
        }
        break;
      }
      case Op::kElu: {
        const NdArray<S>& a = nodes_[n.in0].val;
        detail::elu_forward(a.data.data(), n.val.data.data(), a.size());
        break;
      }
      case Op::kConv2d: compute_conv(n); break;
      case Op::kMaxPool2d: compute_pool(n); break;
      case Op::kDense: {
        const NdArray<S>& x = nodes_[n.in0].val;
        const NdArray<S>& w = nodes_[n.in1].val;
        const NdArray<S>& b = nodes_[n.in2].val;
        std::size_t rows = x.shape[0], m = w.shape[1];
        detail::gemm(false, false, rows, m, x.shape[1], S(1), x.data.data(), w.data.data(), S(0),
                     n.val.data.data());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < m; ++j) n.val.data[i * m + j] += b.data[j];
        break;
      }
      case Op::kAdd: {
        const NdArray<S>& a = nodes_[n.in0].val;
        const NdArray<S>& b = nodes_[n.in1].val;
        for (std::size_t i = 0; i < a.size(); ++i) n.val.data[i] = a.data[i] + b.data[i];
        break;
      }
      case Op::kMul: {
        const NdArray<S>& a = nodes_[n.in0].val;
        const NdArray<S>& b = nodes_[n.in1].val;
        for (std::size_t i = 0; i < a.size(); ++i) n.val.data[i] = a.data[i] * b.data[i];
        break;
      }
      case Op::kScale: {
        const NdArray<S>& a = nodes_[n.in0].val;
        for (std::size_t i = 0; i < a.size(); ++i) n.val.data[i] = a.data[i] * n.scalar;
        break;
      }
      case Op::kLogClamped: {
        const NdArray<S>& a = nodes_[n.in0].val;
        for (std::size_t i = 0; i < a.size(); ++i)
          n.val.data[i] = std::log(std::max(a.data[i], n.scalar));
        break;
      }
      case Op::kSum: {
        const NdArray<S>& a = nodes_[n.in0].val;
        double acc = 0;
        for (S v : a.data) acc += static_cast<double>(v);
        n.val.data[0] = static_cast<S>(acc);
        break;
      }
      case Op::kMeanOverRows: {
        const NdArray<S>& a = nodes_[n.in0].val;
        std::size_t r = a.shape[0], c = a.shape[1];
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0;
          for (std::size_t i = 0; i < r; ++i) acc += static_cast<double>(a.data[i * c + j]);
          n.val.data[j] = static_cast<S>(acc / static_cast<double>(r));
        }
        break;
      }
      case Op::kReshape: {
        n.val.data = nodes_[n.in0].val.data;
        break;
      }
      case Op::kBiasAdd: {
        const NdArray<S>& x = nodes_[n.in0].val;
        const NdArray<S>& b = nodes_[n.in1].val;
        std::size_t c = b.shape[0];
        for (std::size_t i = 0; i < x.size(); ++i) n.val.data[i] = x.data[i] + b.data[i % c];
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const NdArray<S>& x = nodes_[n.in0].val;
        std::size_t r = x.shape[0], c = x.shape[1];
        n.saved = NdArray<S>::zeros(x.shape);
        double total = 0;
        for (std::size_t i = 0; i < r; ++i) {
          const S* row = x.data.data() + i * c;
          S* probs = n.saved.data.data() + i * c;
          S m = row[0];
          for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
          double denom = 0;
          for (std::size_t j = 0; j < c; ++j) {
            probs[j] = std::exp(row[j] - m);
            denom += static_cast<double>(probs[j]);
          }
          S inv = static_cast<S>(1.0 / denom);
          for (std::size_t j = 0; j < c; ++j) probs[j] *= inv;
          double lse = static_cast<double>(m) + std::log(denom);
          total += lse - static_cast<double>(row[n.labels[i]]);
        }
        n.val.data[0] = static_cast<S>(total / static_cast<double>(r));
        break;
      }
    }
  }

  void compute_conv(Node& n) {
    const NdArray<S>& x = nodes_[n.in0].val;
    const NdArray<S>& w = nodes_[n.in1].val;
    std::size_t b = x.shape[0], h = x.shape[1], ww = x.shape[2], ci = x.shape[3];
    std::size_t oh = n.val.shape[1], ow = n.val.shape[2], co = n.val.shape[3];
    std::size_t patch = static_cast<std::size_t>(n.k) * n.k * ci;
    n.saved = NdArray<S>::zeros({b * oh * ow, patch});
    S* cols = n.saved.data.data();
    const S* src = x.data.data();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          S* dst = cols + ((bi * oh + oy) * ow + ox) * patch;
          long long iy0 = static_cast<long long>(oy) * n.stride - n.pad_top;
          long long ix0 = static_cast<long long>(ox) * n.stride - n.pad_left;
          for (int dy = 0; dy < n.k; ++dy) {
            long long iy = iy0 + dy;
            for (int dx = 0; dx < n.k; ++dx) {
              long long ix = ix0 + dx;
              S* cell = dst + (static_cast<std::size_t>(dy) * n.k + dx) * ci;
              if (iy < 0 || iy >= static_cast<long long>(h) || ix < 0 ||
                  ix >= static_cast<long long>(ww)) {
                for (std::size_t c = 0; c < ci; ++c) cell[c] = S(0);
              } else {
                const S* s = src + ((bi * h + iy) * ww + ix) * ci;
                for (std::size_t c = 0; c < ci; ++c) cell[c] = s[c];
              }
            }
          }
        }
    detail::gemm(false, false, b * oh * ow, co, patch, S(1), cols, w.data.data(), S(0),
                 n.val.data.data());
  }

  void compute_pool(Node& n) {
    const NdArray<S>& x = nodes_[n.in0].val;
    std::size_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    std::size_t oh = n.val.shape[1], ow = n.val.shape[2];
    n.argmax.assign(n.val.size(), 0);
    const S* src = x.data.data();
    std::size_t o = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          long long y0 = static_cast<long long>(oy) * n.stride - n.pad_top;
          long long x0 = static_cast<long long>(ox) * n.stride - n.pad_left;
          std::size_t ya = static_cast<std::size_t>(std::max(y0, 0LL));
          std::size_t yb = static_cast<std::size_t>(std::min(y0 + n.k, static_cast<long long>(h)));
          std::size_t xa = static_cast<std::size_t>(std::max(x0, 0LL));
          std::size_t xb = static_cast<std::size_t>(std::min(x0 + n.k, static_cast<long long>(w)));
          for (std::size_t ch = 0; ch < c; ++ch, ++o) {
            S best = src[((bi * h + ya) * w + xa) * c + ch];
            std::size_t best_at = ((bi * h + ya) * w + xa) * c + ch;
            for (std::size_t iy = ya; iy < yb; ++iy)
              for (std::size_t ix = xa; ix < xb; ++ix) {
                std::size_t at = ((bi * h + iy) * w + ix) * c + ch;
                if (src[at] > best) {  // ties keep the first in scan order
                  best = src[at];
                  best_at = at;
                }
              }
            n.val.data[o] = best;
            n.argmax[o] = static_cast<std::uint32_t>(best_at);
          }
        }
  }

  void backprop(Node& n) {
    const NdArray<S>& g = n.grad;
    switch (n.op) {
      case Op::kLeaf: break;
      case Op::kMatmul: {
        const NdArray<S>& a = nodes_[n.in0].val;
        const NdArray<S>& b = nodes_[n.in1].val;
        std::size_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
        if (wants(n.in0))
          detail::gemm(false, true, m, k, c, S(1), g.data.data(), b.data.data(), S(1),
                       grad_buf(n.in0).data.data());
        if (wants(n.in1))
          detail::gemm(true, false, k, c, m, S(1), a.data.data(), g.data.data(), S(1),
                       grad_buf(n.in1).data.data());
        break;
      }
      case Op::kTranspose: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        std::size_t r = n.val.shape[0], c = n.val.shape[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx.data[j * r + i] += g.data[i * c + j];
        break;
      }
      case Op::kSoftmaxRows: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        std::size_t r = n.val.shape[0], c = n.val.shape[1];
        for (std::size_t i = 0; i < r; ++i) {
          const S* y = n.val.data.data() + i * c;
          const S* gr = g.data.data() + i * c;
          double dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * y[j];
          S d = static_cast<S>(dot);
          S* out = gx.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) out[j] += y[j] * (gr[j] - d);
        }
        break;
      }
      case Op::kElu: {
        if (!wants(n.in0)) break;
        const NdArray<S>& x = nodes_[n.in0].val;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t i = 0; i < x.size(); ++i)
          gx.data[i] += x.data[i] > S(0) ? g.data[i] : g.data[i] * (n.val.data[i] + S(1));
        break;
      }
      case Op::kConv2d: backprop_conv(n); break;
      case Op::kMaxPool2d: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t o = 0; o < n.val.size(); ++o) gx.data[n.argmax[o]] += g.data[o];
        break;
      }
      case Op::kDense: {
        const NdArray<S>& x = nodes_[n.in0].val;
        const NdArray<S>& w = nodes_[n.in1].val;
        std::size_t r = x.shape[0], k = x.shape[1], m = w.shape[1];
        if (wants(n.in0))
          detail::gemm(false, true, r, k, m, S(1), g.data.data(), w.data.data(), S(1),
                       grad_buf(n.in0).data.data());
        if (wants(n.in1))
          detail::gemm(true, false, k, m, r, S(1), x.data.data(), g.data.data(), S(1),
                       grad_buf(n.in1).data.data());
        if (wants(n.in2)) {
          NdArray<S>& gb = grad_buf(n.in2);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < m; ++j) gb.data[j] += g.data[i * m + j];
        }
        break;
      }
      case Op::kAdd: {
        for (std::uint32_t in : {n.in0, n.in1}) {
          if (!wants(in)) continue;
          NdArray<S>& gx = grad_buf(in);
          for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
        }
        break;
      }
      case Op::kMul: {
        if (wants(n.in0)) {
          const NdArray<S>& b = nodes_[n.in1].val;
          NdArray<S>& gx = grad_buf(n.in0);
          for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * b.data[i];
        }
        if (wants(n.in1)) {
          const NdArray<S>& a = nodes_[n.in0].val;
          NdArray<S>& gx = grad_buf(n.in1);
          for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * a.data[i];
        }
        break;
      }
      case Op::kScale: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * n.scalar;
        break;
      }
      case Op::kLogClamped: {
        if (!wants(n.in0)) break;
        const NdArray<S>& x = nodes_[n.in0].val;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x.data[i] > n.scalar) gx.data[i] += g.data[i] / x.data[i];
        break;
      }
      case Op::kSum: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += g.data[0];
        break;
      }
      case Op::kMeanOverRows: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        std::size_t r = gx.shape[0], c = gx.shape[1];
        S inv = static_cast<S>(1.0 / static_cast<double>(r));
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx.data[i * c + j] += g.data[j] * inv;
        break;
      }
      case Op::kReshape: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
        break;
      }
      case Op::kBiasAdd: {
        if (wants(n.in0)) {
          NdArray<S>& gx = grad_buf(n.in0);
          for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
        }
        if (wants(n.in1)) {
          NdArray<S>& gb = grad_buf(n.in1);
          std::size_t c = gb.shape[0];
          for (std::size_t i = 0; i < g.size(); ++i) gb.data[i % c] += g.data[i];
        }
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        if (!wants(n.in0)) break;
        NdArray<S>& gx = grad_buf(n.in0);
        std::size_t r = gx.shape[0], c = gx.shape[1];
        S coef = g.data[0] / static_cast<S>(r);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            S onehot = static_cast<std::size_t>(n.labels[i]) == j ? S(1) : S(0);
            gx.data[i * c + j] += coef * (n.saved.data[i * c + j] - onehot);
          }
        break;
      }
    }
  }

  void backprop_conv(Node& n) {
    const NdArray<S>& g = n.grad;
    const NdArray<S>& x = nodes_[n.in0].val;
    const NdArray<S>& w = nodes_[n.in1].val;
    std::size_t rows = n.saved.shape[0], patch = n.saved.shape[1], co = w.shape[3];
    if (wants(n.in1))
      detail::gemm(true, false, patch, co, rows, S(1), n.saved.data.data(), g.data.data(), S(1),
                   grad_buf(n.in1).data.data());
    if (!wants(n.in0)) return;
    NdArray<S> dcols({rows, patch});
    detail::gemm(false, true, rows, patch, co, S(1), g.data.data(), w.data.data(), S(0),
                 dcols.data.data());
    NdArray<S>& gx = grad_buf(n.in0);
    std::size_t b = x.shape[0], h = x.shape[1], ww = x.shape[2], ci = x.shape[3];
    std::size_t oh = n.val.shape[1], ow = n.val.shape[2];
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const S* col = dcols.data.data() + ((bi * oh + oy) * ow + ox) * patch;
          long long iy0 = static_cast<long long>(oy) * n.stride - n.pad_top;
          long long ix0 = static_cast<long long>(ox) * n.stride - n.pad_left;
          for (int dy = 0; dy < n.k; ++dy) {
            long long iy = iy0 + dy;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            for (int dx = 0; dx < n.k; ++dx) {
              long long ix = ix0 + dx;
              if (ix < 0 || ix >= static_cast<long long>(ww)) continue;
              const S* cell = col + (static_cast<std::size_t>(dy) * n.k + dx) * ci;
              S* dst = gx.data.data() + ((bi * h + iy) * ww + ix) * ci;
              for (std::size_t c = 0; c < ci; ++c) dst[c] += cell[c];
            }
          }
        }
  }
};

}  // namespace assoc
