#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "icvid/tensor.hpp"

namespace icvid {

// Central finite-difference gradient verification (64-bit only). The loss
// functor re-evaluates the full forward pass against the current contents of
// the parameter tensors; tape gradients are computed once up front and every
// parameter scalar is perturbed by +-h.
struct GradCheckReport {
  size_t n_checked = 0;
  double max_rel = 0.0;
  std::string worst;  // "name[i]" of the worst element
  bool ok = true;
};

// An element passes when |g - fd| <= tol * max(|g|, |fd|) or both are below
// the finite-difference noise floor (|g - fd| <= abs_floor). The floor covers
// parameters with (near-)zero true gradient, where relative error is
// meaningless and central differences only deliver ~1e-8 absolute accuracy.
inline GradCheckReport fd_check(
    const std::vector<std::pair<std::string, Tensor<double>*>>& params,
    const std::function<double()>& loss_fn,
    const std::vector<Tensor<double>>& tape_grads, double h = 1e-4,
    double tol = 1e-4, double abs_floor = 1e-7) {
  GradCheckReport rep;
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p].second;
    const Tensor<double>& g = tape_grads[p];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double keep = t.data()[i];
      t.data()[i] = keep + h;
      const double lp = loss_fn();
      t.data()[i] = keep - h;
      const double lm = loss_fn();
      t.data()[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double gv = g.data()[i];
      const double diff = std::abs(gv - fd);
      const double denom = std::max(std::abs(gv), std::abs(fd));
      const double rel = denom > 0 ? diff / denom : 0.0;
      ++rep.n_checked;
      const bool pass = diff <= abs_floor || rel <= tol;
      if (!pass) rep.ok = false;
      const double score = diff <= abs_floor ? 0.0 : rel;
      if (score > rep.max_rel) {
        rep.max_rel = score;
        rep.worst = params[p].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace icvid
