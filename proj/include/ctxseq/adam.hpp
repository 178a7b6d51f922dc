#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ctxseq/error.hpp"
#include "ctxseq/tensor.hpp"

namespace ctxseq {

// Bias-corrected Adam state for one parameter tensor.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t t = 0;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

// In-place update of one parameter from its populated gradient.
inline void adam_step(Tensor& param, const std::vector<double>& grad, AdamState& state) {
  auto& val = param.value();
  if (grad.size() != val.size()) throw ShapeError("adam_step: gradient size mismatch");
  if (state.m.size() != val.size()) {
    if (state.t != 0) throw ShapeError("adam_step: state size mismatch");
    state.init(val.size());
  }
  if (state.beta1 <= 0.0 || state.beta1 >= 1.0 || state.beta2 <= 0.0 || state.beta2 >= 1.0) {
    throw ConfigError("adam_step: beta1/beta2 must be in (0,1)");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < val.size(); ++i) {
    const double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    val[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

// Global-norm gradient clipping over a set of gradient buffers.
// Returns the pre-clip norm. clip <= 0 or +inf disables clipping.
inline double clip_global_norm(std::vector<std::vector<double>*> grads, double clip) {
  double sq = 0.0;
  for (auto* g : grads)
    for (double x : *g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && std::isfinite(clip) && norm > clip) {
    const double s = clip / norm;
    for (auto* g : grads)
      for (double& x : *g) x *= s;
  }
  return norm;
}

}  // namespace ctxseq
