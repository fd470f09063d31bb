#pragma once

#include <functional>
#include <vector>

#include "volumix/tensor.hpp"

namespace volumix {

// Central-difference verification of reverse-mode gradients.
struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t input = -1;        // which tensor held the worst coordinate
  int64_t coord = -1;        // flat index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
};

// f must map the given tensors to a scalar. Every coordinate of every input is
// perturbed by ±eps; the returned error is
//   max over coordinates |analytic − central| / max(1, |central|).
template <typename S>
GradCheckReport grad_check_report(const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>& f,
                                  const std::vector<Tensor<S>>& inputs, S eps);

template <typename S>
double grad_check(const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>& f,
                  const std::vector<Tensor<S>>& inputs, S eps);

template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x, S eps);

}  // namespace volumix
