#pragma once

#include <cmath>

#include "assoc/model.h"

namespace assoc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;      // added outside the square root
  double lr_decay = 1.0;  // per-step multiplicative decay; 1 disables
};

template <typename S>
struct AdamState {
  AdamConfig cfg;
  std::vector<NdArray<S>> m, v;  // parallel to the parameter order
  long long t = 0;
};

template <typename S>
AdamState<S> make_adam_state(const Parameters<S>& params, const AdamConfig& cfg) {
  AdamState<S> st;
  st.cfg = cfg;
  st.m.reserve(params.tensors.size());
  st.v.reserve(params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    st.m.push_back(NdArray<S>::zeros(t.shape));
    st.v.push_back(NdArray<S>::zeros(t.shape));
  }
  return st;
}

// one bias-corrected Adam update; rejects non-finite gradients by name
template <typename S>
void adam_step(Parameters<S>& params, const std::vector<NdArray<S>>& grads, AdamState<S>& st) {
  if (grads.size() != params.tensors.size())
    throw Error("adam_step: gradient count does not match parameter count");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!(grads[i].shape == params.tensors[i].second.shape))
      throw ShapeError("adam_step: gradient shape mismatch for '" + params.tensors[i].first + "'");
    for (S gv : grads[i].data)
      if (!std::isfinite(static_cast<double>(gv)))
        throw Error("non-finite gradient for parameter '" + params.tensors[i].first + "'");
  }
  st.t += 1;
  double t = static_cast<double>(st.t);
  double corr1 = 1.0 - std::pow(st.cfg.beta1, t);
  double corr2 = 1.0 - std::pow(st.cfg.beta2, t);
  double lr_t = st.cfg.lr * std::pow(st.cfg.lr_decay, t - 1.0);
  S b1 = static_cast<S>(st.cfg.beta1), b2 = static_cast<S>(st.cfg.beta2);
  S eps = static_cast<S>(st.cfg.eps);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    S* theta = params.tensors[i].second.data.data();
    S* m = st.m[i].data.data();
    S* v = st.v[i].data.data();
    const S* g = grads[i].data.data();
    std::size_t n = grads[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      S mhat = static_cast<S>(m[j] / corr1);
      S vhat = static_cast<S>(v[j] / corr2);
      theta[j] -= static_cast<S>(lr_t) * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace assoc
