#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/tensor/tensor.hpp"

namespace hoplab::tensor {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference verification of analytic gradients, 64-bit only.
// compute_grads must zero parameter grads, run forward+backward, and return
// the loss; loss_only must run the same forward and return the loss without
// touching grads. Checks up to coords_per_tensor sampled coordinates of each
// parameter. Relative error uses max(|analytic|, |numeric|, 1e-6) as the
// denominator.
template <typename ComputeFn, typename LossFn>
GradCheckResult grad_check(ComputeFn&& compute_grads, LossFn&& loss_only,
                           const std::vector<Tensor<double>*>& params,
                           double eps, std::size_t coords_per_tensor,
                           std::uint64_t seed) {
  compute_grads();
  GradCheckResult res;
  Rng rng(derive_seed(seed, 0x67636b20));  // "gck "
  for (Tensor<double>* p : params) {
    if (p->size() == 0) continue;
    const std::size_t k = std::min(coords_per_tensor, p->size());
    std::vector<std::uint32_t> coords =
        sample_without_replacement(p->size(), k, rng);
    for (std::uint32_t c : coords) {
      const double saved = p->val[c];
      p->val[c] = saved + eps;
      const double up = loss_only();
      p->val[c] = saved - eps;
      const double down = loss_only();
      p->val[c] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[c];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      res.max_rel_err =
          std::max(res.max_rel_err, std::abs(analytic - numeric) / denom);
      ++res.coords_checked;
    }
  }
  return res;
}

}  // namespace hoplab::tensor
