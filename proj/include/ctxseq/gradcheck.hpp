#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ctxseq/error.hpp"
#include "ctxseq/tensor.hpp"

namespace ctxseq {

// Central finite differences against backward() for every coordinate of
// every listed parameter. f must be a deterministic scalar function of the
// parameters (dropout off, rng frozen); non-determinism is detected by a
// double evaluation at the base point. Returns the worst relative error
// |fd - an| / max(|fd|, |an|, 1e-4).
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps = 1e-5) {
  const double base1 = f().item();
  const double base2 = f().item();
  if (base1 != base2) throw OracleError("objective is not deterministic across evaluations");

  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& val = p.value();
    for (size_t i = 0; i < val.size(); ++i) {
      const double keep = val[i];
      val[i] = keep + eps;
      const double fp = f().item();
      val[i] = keep - eps;
      const double fm = f().item();
      val[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[pi][i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-4});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace ctxseq
