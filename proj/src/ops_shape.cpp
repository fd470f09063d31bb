#include <algorithm>

#include "volumix/ops.hpp"

namespace volumix {

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + str(a.shape()) + " as " + str(shape));
  }
  std::vector<S> v = a.values();
  return make_node<S>("reshape", std::move(shape), std::move(v), {a}, [](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    for (size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
  });
}

namespace {

// Walks output indices of permute(in_shape, perm) and yields the matching
// source index. forward: out[o] = in[src]; backward: in_grad[src] += g[o].
template <typename S>
void permute_apply(const Shape& in_shape, const std::vector<int>& perm, const std::vector<S>& src,
                   std::vector<S>& dst, bool backward) {
  int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = in_shape[perm[i]];
  auto in_st = strides_of(in_shape);
  auto out_st = strides_of(out_shape);
  int64_t n = numel(in_shape);
  for (int64_t o = 0; o < n; ++o) {
    int64_t s = 0;
    int64_t rem = o;
    for (int i = 0; i < r; ++i) {
      int64_t coord = rem / out_st[i];
      rem %= out_st[i];
      s += coord * in_st[perm[i]];
    }
    if (backward) {
      dst[static_cast<size_t>(s)] += src[static_cast<size_t>(o)];
    } else {
      dst[static_cast<size_t>(o)] = src[static_cast<size_t>(s)];
    }
  }
}

}  // namespace

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm) {
  int r = static_cast<int>(a.dim());
  if (static_cast<int>(perm.size()) != r) {
    throw ShapeError("permute: perm size " + std::to_string(perm.size()) + " vs rank " +
                     std::to_string(r));
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw ShapeError("permute: invalid perm");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = a.shape()[perm[i]];
  std::vector<S> v(a.values().size());
  permute_apply(a.shape(), perm, a.values(), v, false);
  return make_node<S>("permute", std::move(out_shape), std::move(v), {a}, [perm](Node<S>& n) {
    permute_apply(n.parents[0]->shape, perm, n.grad, n.parents[0]->grad, true);
  });
}

template <typename S>
Tensor<S> flip(const Tensor<S>& a, int axis) {
  int r = static_cast<int>(a.dim());
  if (axis < 0 || axis >= r) throw ShapeError("flip: axis out of range for " + str(a.shape()));
  auto st = strides_of(a.shape());
  int64_t extent = a.shape()[axis];
  int64_t inner = st[axis];
  int64_t outer = a.numel() / (extent * inner);
  std::vector<S> v(a.values().size());
  const S* p = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t e = 0; e < extent; ++e) {
      const S* src = p + (o * extent + e) * inner;
      S* dst = v.data() + (o * extent + (extent - 1 - e)) * inner;
      std::copy(src, src + inner, dst);
    }
  }
  return make_node<S>("flip", a.shape(), std::move(v), {a},
                      [extent, inner, outer](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (int64_t o = 0; o < outer; ++o) {
                          for (int64_t e = 0; e < extent; ++e) {
                            const S* g = n.grad.data() + (o * extent + e) * inner;
                            S* dst = gx.data() + (o * extent + (extent - 1 - e)) * inner;
                            for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                          }
                        }
                      });
}

template <typename S>
Tensor<S> shift_one(const Tensor<S>& a, int axis) {
  int r = static_cast<int>(a.dim());
  if (axis < 0 || axis >= r) throw ShapeError("shift_one: axis out of range for " + str(a.shape()));
  auto st = strides_of(a.shape());
  int64_t extent = a.shape()[axis];
  int64_t inner = st[axis];
  int64_t outer = a.numel() / (extent * inner);
  std::vector<S> v(a.values().size(), S(0));
  const S* p = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t e = 0; e + 1 < extent; ++e) {
      const S* src = p + (o * extent + e) * inner;
      S* dst = v.data() + (o * extent + e + 1) * inner;
      std::copy(src, src + inner, dst);
    }
  }
  return make_node<S>("shift_one", a.shape(), std::move(v), {a},
                      [extent, inner, outer](Node<S>& n) {
                        auto& gx = n.parents[0]->grad;
                        for (int64_t o = 0; o < outer; ++o) {
                          for (int64_t e = 0; e + 1 < extent; ++e) {
                            const S* g = n.grad.data() + (o * extent + e + 1) * inner;
                            S* dst = gx.data() + (o * extent + e) * inner;
                            for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                          }
                        }
                      });
}

namespace {

template <typename S>
void box_walk(const Shape& full, const std::vector<int64_t>& start, const Shape& box,
              const std::function<void(int64_t full_idx, int64_t box_idx)>& fn) {
  auto full_st = strides_of(full);
  auto box_st = strides_of(box);
  int r = static_cast<int>(full.size());
  int64_t n = numel(box);
  for (int64_t b = 0; b < n; ++b) {
    int64_t rem = b;
    int64_t fi = 0;
    for (int i = 0; i < r; ++i) {
      int64_t coord = rem / box_st[i];
      rem %= box_st[i];
      fi += (start[i] + coord) * full_st[i];
    }
    fn(fi, b);
  }
}

}  // namespace

template <typename S>
Tensor<S> slice(const Tensor<S>& a, const std::vector<int64_t>& start,
                const std::vector<int64_t>& len) {
  int r = static_cast<int>(a.dim());
  if (static_cast<int>(start.size()) != r || static_cast<int>(len.size()) != r) {
    throw ShapeError("slice: start/len rank mismatch with " + str(a.shape()));
  }
  Shape box(len.begin(), len.end());
  for (int i = 0; i < r; ++i) {
    if (start[i] < 0 || len[i] < 1 || start[i] + len[i] > a.shape()[i]) {
      throw ShapeError("slice: window " + str(box) + " at offset out of range for " +
                       str(a.shape()));
    }
  }
  std::vector<S> v(static_cast<size_t>(numel(box)));
  const S* p = a.data();
  box_walk<S>(a.shape(), start, box,
              [&](int64_t fi, int64_t bi) { v[static_cast<size_t>(bi)] = p[fi]; });
  std::vector<int64_t> start_copy = start;
  return make_node<S>("slice", box, std::move(v), {a}, [start_copy, box](Node<S>& n) {
    auto& gx = n.parents[0]->grad;
    box_walk<S>(n.parents[0]->shape, start_copy, box,
                [&](int64_t fi, int64_t bi) { gx[static_cast<size_t>(fi)] += n.grad[static_cast<size_t>(bi)]; });
  });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int r = static_cast<int>(parts[0].dim());
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  for (size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (static_cast<int>(s.size()) != r) {
      throw ShapeError("concat: rank mismatch " + str(out_shape) + " vs " + str(s));
    }
    for (int d = 0; d < r; ++d) {
      if (d != axis && s[d] != out_shape[d]) {
        throw ShapeError("concat: shape mismatch " + str(parts[0].shape()) + " vs " + str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  auto st = strides_of(out_shape);
  int64_t inner = st[axis];
  int64_t outer = numel(out_shape) / (out_shape[axis] * inner);
  std::vector<S> v(static_cast<size_t>(numel(out_shape)));
  std::vector<int64_t> offsets;  // running offset of each part along axis
  int64_t off = 0;
  for (const auto& part : parts) {
    offsets.push_back(off);
    int64_t e = part.shape()[axis];
    const S* p = part.data();
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = p + o * e * inner;
      S* dst = v.data() + (o * out_shape[axis] + off) * inner;
      std::copy(src, src + e * inner, dst);
    }
    off += e;
  }
  std::vector<Tensor<S>> parents = parts;
  int64_t total_axis = out_shape[axis];
  return make_node<S>("concat", out_shape, std::move(v), parents,
                      [offsets, inner, outer, total_axis](Node<S>& n) {
                        for (size_t k = 0; k < n.parents.size(); ++k) {
                          auto& pnode = *n.parents[k];
                          int64_t extent = static_cast<int64_t>(pnode.value.size()) / (outer * inner);
                          for (int64_t o = 0; o < outer; ++o) {
                            const S* g = n.grad.data() + (o * total_axis + offsets[k]) * inner;
                            S* dst = pnode.grad.data() + o * extent * inner;
                            for (int64_t i = 0; i < extent * inner; ++i) dst[i] += g[i];
                          }
                        }
                      });
}

#define VOLUMIX_INST(S)                                                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                      \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                    \
  template Tensor<S> flip(const Tensor<S>&, int);                                           \
  template Tensor<S> shift_one(const Tensor<S>&, int);                                      \
  template Tensor<S> slice(const Tensor<S>&, const std::vector<int64_t>&,                   \
                           const std::vector<int64_t>&);                                    \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
