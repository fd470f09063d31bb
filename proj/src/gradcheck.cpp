#include <cmath>

#include "volumix/gradcheck.hpp"

namespace volumix {

template <typename S>
GradCheckReport grad_check_report(const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>& f,
                                  const std::vector<Tensor<S>>& inputs, S eps) {
  // Fresh leaf copies so the analytic pass owns its own graph.
  std::vector<Tensor<S>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) {
    leaves.push_back(Tensor<S>::param(t.shape(), std::vector<S>(t.data(), t.data() + t.numel())));
  }
  Tensor<S> y = f(leaves);
  if (y.numel() != 1) {
    throw ShapeError("grad_check: f must be scalar-valued, got shape " + str(y.shape()));
  }
  y.backward();
  std::vector<std::vector<S>> analytic;
  analytic.reserve(leaves.size());
  for (auto& t : leaves) analytic.push_back(t.grad());

  // Flat task list over every coordinate of every input.
  std::vector<int64_t> offsets{0};
  for (const auto& t : inputs) offsets.push_back(offsets.back() + t.numel());
  int64_t total = offsets.back();

  std::vector<double> errs(static_cast<size_t>(total), 0.0);
  parallel_for(total, [&](int64_t task) {
    NoGradGuard guard;  // thread-local: set inside the worker
    size_t which = 0;
    while (offsets[which + 1] <= task) ++which;
    int64_t j = task - offsets[which];

    auto eval = [&](S delta) {
      std::vector<Tensor<S>> probe = inputs;
      std::vector<S> vals(inputs[which].data(), inputs[which].data() + inputs[which].numel());
      vals[static_cast<size_t>(j)] += delta;
      probe[which] = Tensor<S>::from(inputs[which].shape(), std::move(vals));
      return static_cast<double>(f(probe).item());
    };
    double num = (eval(eps) - eval(-eps)) / (2.0 * static_cast<double>(eps));
    double ana = static_cast<double>(analytic[which][static_cast<size_t>(j)]);
    errs[static_cast<size_t>(task)] = std::abs(ana - num) / std::max(1.0, std::abs(num));
  });

  GradCheckReport rep;
  for (int64_t t = 0; t < total; ++t) {
    if (errs[static_cast<size_t>(t)] >= rep.max_rel_err) {
      size_t which = 0;
      while (offsets[which + 1] <= t) ++which;
      rep.max_rel_err = errs[static_cast<size_t>(t)];
      rep.input = static_cast<int64_t>(which);
      rep.coord = t - offsets[which];
    }
  }
  if (rep.input >= 0) {
    size_t which = static_cast<size_t>(rep.input);
    rep.analytic = static_cast<double>(analytic[which][static_cast<size_t>(rep.coord)]);
    NoGradGuard guard;
    std::vector<Tensor<S>> probe = inputs;
    auto eval = [&](S delta) {
      std::vector<S> vals(inputs[which].data(), inputs[which].data() + inputs[which].numel());
      vals[static_cast<size_t>(rep.coord)] += delta;
      probe[which] = Tensor<S>::from(inputs[which].shape(), std::move(vals));
      return static_cast<double>(f(probe).item());
    };
    rep.numeric = (eval(eps) - eval(-eps)) / (2.0 * static_cast<double>(eps));
  }
  return rep;
}

template <typename S>
double grad_check(const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>& f,
                  const std::vector<Tensor<S>>& inputs, S eps) {
  return grad_check_report(f, inputs, eps).max_rel_err;
}

template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x, S eps) {
  return grad_check<S>([&](const std::vector<Tensor<S>>& in) { return f(in[0]); }, {x}, eps);
}

#define VOLUMIX_INST(S)                                                                  \
  template GradCheckReport grad_check_report(                                            \
      const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>&,                    \
      const std::vector<Tensor<S>>&, S);                                                 \
  template double grad_check(const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>&, \
                             const std::vector<Tensor<S>>&, S);                          \
  template double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>&, const Tensor<S>&, \
                             S);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
