#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "assoc/graph.h"

namespace assoc {

struct LayerDesc {
  enum class Kind { kConv, kPool, kFc };
  Kind kind = Kind::kFc;
  int units = 0;   // conv filters / fc width
  int window = 0;  // conv & pool kernel extent
  int stride = 1;  // conv stride; pool stride defaults to the window
  bool operator==(const LayerDesc&) const = default;
};

struct ModelSpec {
  std::vector<LayerDesc> layers;
  int embedding_dim = 0;  // width of the final FC layer
  bool operator==(const ModelSpec&) const = default;
};

// grammar: layer ("->" layer)*, whitespace-insensitive
//   C(filters,k)  C(filters,k,stride=s)  P(k)  P(k,stride)  FC(units)
// the last layer must be FC; conv/pool may not follow an FC layer
ModelSpec parse_architecture(const std::string& text);

// canonical form: round-trips through parse_architecture
std::string render_architecture(const ModelSpec& spec);

struct InputShape {
  std::size_t h = 0, w = 0, c = 0;
  bool operator==(const InputShape&) const = default;
};

// named tensors in a fixed order (layer order, kernel/weight before bias)
template <typename S>
struct Parameters {
  std::vector<std::pair<std::string, NdArray<S>>> tensors;

  NdArray<S>* find(std::string_view name) {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  const NdArray<S>* find(std::string_view name) const {
    return const_cast<Parameters*>(this)->find(name);
  }
};

// parameter tensor names and shapes for a spec; He-normal weights, zero biases
template <typename S>
Parameters<S> init_parameters(const ModelSpec& spec, InputShape in, int num_classes,
                              std::uint64_t seed);

template <typename S>
struct ParamNodes {
  std::vector<std::pair<std::string, NodeId>> nodes;

  NodeId find(std::string_view name) const {
    for (const auto& [n, id] : nodes)
      if (n == name) return id;
    throw Error("unknown parameter tensor '" + std::string(name) + "'");
  }
};

template <typename S>
ParamNodes<S> upload_parameters(Graph<S>& g, const Parameters<S>& params) {
  ParamNodes<S> out;
  out.nodes.reserve(params.tensors.size());
  for (const auto& [name, t] : params.tensors) out.nodes.emplace_back(name, g.parameter(t));
  return out;
}

template <typename S>
struct ForwardResult {
  NodeId embeddings;  // [b, embedding_dim], after elu
  NodeId logits;      // [b, num_classes], linear head
};

// records the full forward pass for a batch of images [b,h,w,c]
template <typename S>
ForwardResult<S> forward(Graph<S>& g, const ModelSpec& spec, const ParamNodes<S>& params,
                         NodeId images);

inline constexpr double kWeightDecay = 1e-4;

// decay * sum of squared conv kernels and fc/head weights; biases excluded
template <typename S>
NodeId l2_penalty(Graph<S>& g, const ParamNodes<S>& params, double decay = kWeightDecay);

// ---- implementation of the templated pieces ----

namespace detail {

// shape bookkeeping shared by init_parameters and forward
struct LayerPlan {
  std::vector<std::string> names;  // one per layer: "conv1", "fc1", ...
  InputShape out;                  // spatial shape after the last conv/pool
};

inline std::pair<std::size_t, std::size_t> pooled_extent(std::size_t h, std::size_t w, int stride) {
  return {(h + stride - 1) / stride, (w + stride - 1) / stride};
}

inline LayerPlan plan_layers(const ModelSpec& spec, InputShape in) {
  LayerPlan plan;
  InputShape cur = in;
  int conv_i = 0, fc_i = 0;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerDesc::Kind::kConv: {
        plan.names.push_back("conv" + std::to_string(++conv_i));
        auto [oh, ow] = pooled_extent(cur.h, cur.w, l.stride);
        cur = {oh, ow, static_cast<std::size_t>(l.units)};
        break;
      }
      case LayerDesc::Kind::kPool: {
        plan.names.push_back("pool");
        if (cur.h < static_cast<std::size_t>(l.window) ||
            cur.w < static_cast<std::size_t>(l.window))
          throw Error("architecture incompatible with input: pool window " +
                      std::to_string(l.window) + " on a " + std::to_string(cur.h) + "x" +
                      std::to_string(cur.w) + " map");
        auto [oh, ow] = pooled_extent(cur.h, cur.w, l.stride);
        cur = {oh, ow, cur.c};
        break;
      }
      case LayerDesc::Kind::kFc:
        plan.names.push_back("fc" + std::to_string(++fc_i));
        break;
    }
  }
  plan.out = cur;
  return plan;
}

}  // namespace detail

template <typename S>
Parameters<S> init_parameters(const ModelSpec& spec, InputShape in, int num_classes,
                              std::uint64_t seed) {
  if (spec.layers.empty() || spec.layers.back().kind != LayerDesc::Kind::kFc)
    throw Error("init_parameters: architecture must end with an FC layer");
  if (num_classes < 2) throw Error("init_parameters: need at least 2 classes");
  if (in.h == 0 || in.w == 0 || in.c == 0)
    throw Error("init_parameters: input shape has a zero extent");
  detail::LayerPlan plan = detail::plan_layers(spec, in);  // validates pooling fits

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto he = [&](Shape shape, std::size_t fan_in) {
    NdArray<S> t(std::move(shape));
    double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<S>(normal(rng) * std_dev);
    return t;
  };

  Parameters<S> out;
  InputShape cur = in;
  bool flat = false;
  std::size_t width = 0;
  std::size_t li = 0;
  for (const LayerDesc& l : spec.layers) {
    const std::string& name = plan.names[li++];
    switch (l.kind) {
      case LayerDesc::Kind::kConv: {
        std::size_t k = static_cast<std::size_t>(l.window);
        std::size_t fan_in = k * k * cur.c;
        out.tensors.emplace_back(name + ".kernel",
                                 he({k, k, cur.c, static_cast<std::size_t>(l.units)}, fan_in));
        out.tensors.emplace_back(name + ".bias",
                                 NdArray<S>::zeros({static_cast<std::size_t>(l.units)}));
        auto [oh, ow] = detail::pooled_extent(cur.h, cur.w, l.stride);
        cur = {oh, ow, static_cast<std::size_t>(l.units)};
        break;
      }
      case LayerDesc::Kind::kPool: {
        auto [oh, ow] = detail::pooled_extent(cur.h, cur.w, l.stride);
        cur = {oh, ow, cur.c};
        break;
      }
      case LayerDesc::Kind::kFc: {
        if (!flat) {
          flat = true;
          width = cur.h * cur.w * cur.c;
        }
        out.tensors.emplace_back(name + ".weight",
                                 he({width, static_cast<std::size_t>(l.units)}, width));
        out.tensors.emplace_back(name + ".bias",
                                 NdArray<S>::zeros({static_cast<std::size_t>(l.units)}));
        width = static_cast<std::size_t>(l.units);
        break;
      }
    }
  }
  out.tensors.emplace_back("head.weight",
                           he({width, static_cast<std::size_t>(num_classes)}, width));
  out.tensors.emplace_back("head.bias", NdArray<S>::zeros({static_cast<std::size_t>(num_classes)}));
  return out;
}

template <typename S>
ForwardResult<S> forward(Graph<S>& g, const ModelSpec& spec, const ParamNodes<S>& params,
                         NodeId images) {
  if (g.val(images).shape.size() != 4)
    throw ShapeError("forward: images must be [b,h,w,c], got " +
                     shape_str(g.val(images).shape));
  NodeId cur = images;
  bool flat = false;
  int conv_i = 0, fc_i = 0;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerDesc::Kind::kConv: {
        std::string name = "conv" + std::to_string(++conv_i);
        cur = g.conv2d(cur, params.find(name + ".kernel"), l.stride);
        cur = g.bias_add(cur, params.find(name + ".bias"));
        cur = g.elu(cur);
        break;
      }
      case LayerDesc::Kind::kPool:
        cur = g.maxpool2d(cur, l.window, l.stride);
        break;
      case LayerDesc::Kind::kFc: {
        if (!flat) {
          flat = true;
          const Shape& s = g.val(cur).shape;
          cur = g.reshape(cur, {s[0], s[1] * s[2] * s[3]});
        }
        std::string name = "fc" + std::to_string(++fc_i);
        cur = g.dense(cur, params.find(name + ".weight"), params.find(name + ".bias"));
        cur = g.elu(cur);
        break;
      }
    }
  }
  ForwardResult<S> out;
  out.embeddings = cur;
  out.logits = g.dense(cur, params.find("head.weight"), params.find("head.bias"));
  return out;
}

template <typename S>
NodeId l2_penalty(Graph<S>& g, const ParamNodes<S>& params, double decay) {
  NodeId acc{};
  bool have = false;
  for (const auto& [name, id] : params.nodes) {
    if (name.ends_with(".bias")) continue;
    NodeId sq = g.sum(g.mul(id, id));
    acc = have ? g.add(acc, sq) : sq;
    have = true;
  }
  if (!have) return g.value(NdArray<S>::scalar(0));
  return g.scale(acc, static_cast<S>(decay));
}

}  // namespace assoc
