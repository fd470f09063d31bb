#include <cmath>

#include "volumix/ops.hpp"

namespace volumix {

namespace {

template <typename S>
void require_same(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + str(a.shape()) + " vs " +
                     str(b.shape()));
  }
}

template <typename S, typename F>
std::vector<S> map1(const Tensor<S>& a, F f) {
  std::vector<S> out(a.values().size());
  const S* p = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(p[i]);
  return out;
}

// Numerically safe sigmoid.
template <typename S>
S sig(S x) {
  if (x >= S(0)) {
    S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
S soft_plus(S x) {
  if (x > S(20)) return x;
  if (x < S(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same("add", a, b);
  std::vector<S> v(a.values().size());
  const S *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + pb[i];
  return make_node<S>("add", a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] += n.grad[i];
    }
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same("sub", a, b);
  std::vector<S> v(a.values().size());
  const S *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] - pb[i];
  return make_node<S>("sub", a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] -= n.grad[i];
    }
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same("mul", a, b);
  std::vector<S> v(a.values().size());
  const S *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pb[i];
  return make_node<S>("mul", a.shape(), std::move(v), {a, b}, [](Node<S>& n) {
    const auto& va = n.parents[0]->value;
    const auto& vb = n.parents[1]->value;
    auto& ga = n.parents[0]->grad;
    auto& gb = n.parents[1]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i] * vb[i];
      gb[i] += n.grad[i] * va[i];
    }
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return make_node<S>("add_scalar", a.shape(), map1(a, [c](S x) { return x + c; }), {a},
                      [](Node<S>& n) {
                        auto& ga = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
                      });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  return make_node<S>("mul_scalar", a.shape(), map1(a, [c](S x) { return x * c; }), {a},
                      [c](Node<S>& n) {
                        auto& ga = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += c * n.grad[i];
                      });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  // NaN inputs pass through so bad values cannot be laundered into zeros.
  return make_node<S>("relu", a.shape(),
                      map1(a, [](S x) { return x > S(0) || x != x ? x : S(0); }), {a},
                      [](Node<S>& n) {
                        const auto& vx = n.parents[0]->value;
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) {
                          if (vx[i] > S(0)) gx[i] += n.grad[i];
                        }
                      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return make_node<S>("sigmoid", a.shape(), map1(a, [](S x) { return sig(x); }), {a},
                      [](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) {
                          S y = n.value[i];
                          gx[i] += n.grad[i] * y * (S(1) - y);
                        }
                      });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& a) {
  return make_node<S>("silu", a.shape(), map1(a, [](S x) { return x * sig(x); }), {a},
                      [](Node<S>& n) {
                        const auto& vx = n.parents[0]->value;
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) {
                          S s = sig(vx[i]);
                          gx[i] += n.grad[i] * s * (S(1) + vx[i] * (S(1) - s));
                        }
                      });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return make_node<S>("exp", a.shape(), map1(a, [](S x) { return std::exp(x); }), {a},
                      [](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * n.value[i];
                      });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return make_node<S>("log", a.shape(), map1(a, [](S x) { return std::log(x); }), {a},
                      [](Node<S>& n) {
                        const auto& vx = n.parents[0]->value;
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] / vx[i];
                      });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return make_node<S>("sqrt", a.shape(), map1(a, [](S x) { return std::sqrt(x); }), {a},
                      [](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) {
                          gx[i] += n.grad[i] / (S(2) * n.value[i]);
                        }
                      });
}

template <typename S>
Tensor<S> reciprocal(const Tensor<S>& a) {
  return make_node<S>("reciprocal", a.shape(), map1(a, [](S x) { return S(1) / x; }), {a},
                      [](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) {
                          gx[i] -= n.grad[i] * n.value[i] * n.value[i];
                        }
                      });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
  return make_node<S>("softplus", a.shape(), map1(a, [](S x) { return soft_plus(x); }), {a},
                      [](Node<S>& n) {
                        const auto& vx = n.parents[0]->value;
                        auto& gx = n.parents[0]->grad;
                        for (size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * sig(vx[i]);
                      });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.dim() < 1) throw ShapeError("softmax: rank-0 input");
  int64_t last = a.shape().back();
  int64_t rows = a.numel() / last;
  std::vector<S> v(a.values().size());
  const S* p = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = p + r * last;
    S* out = v.data() + r * last;
    S m = row[0];
    for (int64_t i = 1; i < last; ++i) m = std::max(m, row[i]);
    S z = S(0);
    for (int64_t i = 0; i < last; ++i) {
      out[i] = std::exp(row[i] - m);
      z += out[i];
    }
    for (int64_t i = 0; i < last; ++i) out[i] /= z;
  }
  return make_node<S>("softmax", a.shape(), std::move(v), {a}, [last, rows](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    for (int64_t r = 0; r < rows; ++r) {
      const S* y = n.value.data() + r * last;
      const S* g = n.grad.data() + r * last;
      S dot = S(0);
      for (int64_t i = 0; i < last; ++i) dot += g[i] * y[i];
      S* out = gx.data() + r * last;
      for (int64_t i = 0; i < last; ++i) out[i] += (g[i] - dot) * y[i];
    }
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.values()) acc += x;
  return make_node<S>("sum", {1}, {acc}, {a}, [](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    S g = n.grad[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.values()) acc += x;
  S inv = S(1) / static_cast<S>(a.numel());
  return make_node<S>("mean", {1}, {acc * inv}, {a}, [inv](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    S g = n.grad[0] * inv;
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename S>
Tensor<S> mean_axis0(const Tensor<S>& a) {
  if (a.dim() < 1) throw ShapeError("mean_axis0: rank-0 input");
  int64_t c = a.shape()[0];
  int64_t rest = a.numel() / c;
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  if (out_shape.empty()) out_shape = {1};
  std::vector<S> v(static_cast<size_t>(rest), S(0));
  const S* p = a.data();
  for (int64_t i = 0; i < c; ++i) {
    const S* row = p + i * rest;
    for (int64_t j = 0; j < rest; ++j) v[static_cast<size_t>(j)] += row[j];
  }
  S inv = S(1) / static_cast<S>(c);
  for (auto& x : v) x *= inv;
  return make_node<S>("mean_axis0", out_shape, std::move(v), {a}, [c, rest, inv](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    for (int64_t i = 0; i < c; ++i) {
      S* row = gx.data() + i * rest;
      for (int64_t j = 0; j < rest; ++j) row[j] += n.grad[static_cast<size_t>(j)] * inv;
    }
  });
}

template <typename S>
Tensor<S> mean_rest(const Tensor<S>& a) {
  if (a.dim() < 1) throw ShapeError("mean_rest: rank-0 input");
  int64_t c = a.shape()[0];
  int64_t rest = a.numel() / c;
  std::vector<S> v(static_cast<size_t>(c), S(0));
  const S* p = a.data();
  for (int64_t i = 0; i < c; ++i) {
    S acc = S(0);
    const S* row = p + i * rest;
    for (int64_t j = 0; j < rest; ++j) acc += row[j];
    v[static_cast<size_t>(i)] = acc / static_cast<S>(rest);
  }
  S inv = S(1) / static_cast<S>(rest);
  return make_node<S>("mean_rest", {c}, std::move(v), {a}, [c, rest, inv](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    for (int64_t i = 0; i < c; ++i) {
      S g = n.grad[static_cast<size_t>(i)] * inv;
      S* row = gx.data() + i * rest;
      for (int64_t j = 0; j < rest; ++j) row[j] += g;
    }
  });
}

template <typename S>
Tensor<S> expand_axis0(const Tensor<S>& s, int64_t nrep) {
  if (nrep < 1) throw ShapeError("expand_axis0: repeat count < 1");
  Shape out_shape;
  out_shape.push_back(nrep);
  // A scalar [1] expands to [n]; anything else prepends the axis.
  if (!(s.dim() == 1 && s.shape()[0] == 1)) {
    for (int64_t e : s.shape()) out_shape.push_back(e);
  }
  int64_t rest = s.numel();
  std::vector<S> v(static_cast<size_t>(nrep * rest));
  for (int64_t i = 0; i < nrep; ++i) {
    std::copy(s.values().begin(), s.values().end(), v.begin() + i * rest);
  }
  return make_node<S>("expand_axis0", std::move(out_shape), std::move(v), {s},
                      [nrep, rest](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (int64_t i = 0; i < nrep; ++i) {
                          const S* row = n.grad.data() + i * rest;
                          for (int64_t j = 0; j < rest; ++j) gx[static_cast<size_t>(j)] += row[j];
                        }
                      });
}

template <typename S>
Tensor<S> expand_rest(const Tensor<S>& s, Shape rest_shape) {
  if (s.dim() != 1) throw ShapeError("expand_rest: source must be rank-1, got " + str(s.shape()));
  int64_t c = s.shape()[0];
  int64_t rest = numel(rest_shape);
  Shape out_shape;
  out_shape.push_back(c);
  for (int64_t e : rest_shape) out_shape.push_back(e);
  std::vector<S> v(static_cast<size_t>(c * rest));
  for (int64_t i = 0; i < c; ++i) {
    std::fill(v.begin() + i * rest, v.begin() + (i + 1) * rest, s.values()[static_cast<size_t>(i)]);
  }
  return make_node<S>("expand_rest", std::move(out_shape), std::move(v), {s},
                      [c, rest](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (int64_t i = 0; i < c; ++i) {
                          S acc = S(0);
                          const S* row = n.grad.data() + i * rest;
                          for (int64_t j = 0; j < rest; ++j) acc += row[j];
                          gx[static_cast<size_t>(i)] += acc;
                        }
                      });
}

#define VOLUMIX_INST(S)                                                        \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                          \
  template Tensor<S> mul_scalar(const Tensor<S>&, S);                          \
  template Tensor<S> neg(const Tensor<S>&);                                    \
  template Tensor<S> relu(const Tensor<S>&);                                   \
  template Tensor<S> sigmoid(const Tensor<S>&);                                \
  template Tensor<S> silu(const Tensor<S>&);                                   \
  template Tensor<S> exp(const Tensor<S>&);                                    \
  template Tensor<S> log(const Tensor<S>&);                                    \
  template Tensor<S> sqrt(const Tensor<S>&);                                   \
  template Tensor<S> reciprocal(const Tensor<S>&);                             \
  template Tensor<S> softplus(const Tensor<S>&);                               \
  template Tensor<S> softmax(const Tensor<S>&);                                \
  template Tensor<S> sum(const Tensor<S>&);                                    \
  template Tensor<S> mean(const Tensor<S>&);                                   \
  template Tensor<S> mean_axis0(const Tensor<S>&);                             \
  template Tensor<S> mean_rest(const Tensor<S>&);                              \
  template Tensor<S> expand_axis0(const Tensor<S>&, int64_t);                  \
  template Tensor<S> expand_rest(const Tensor<S>&, Shape);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
