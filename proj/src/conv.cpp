#include <Eigen/Dense>
#include <cmath>
#include <type_traits>

#include "volumix/ops.hpp"

// conv3d: the fast path iterates kernel taps in the reference order and, per
// tap, fma-accumulates a whole row of outputs against a contiguous input row.
// Each output element therefore sees the exact per-element fma chain of the
// reference loops (taps whose input lies in the zero padding contribute
// exactly zero either way), so the two paths are bitwise identical in either
// precision while the row form vectorizes.
//
// conv_transpose3d is built as a differentiable composite on top of that fast
// path: zero-stuff the input by the stride, rearrange the weight into the
// forward-conv layout (swap in/out channels per group, flip the kernel), and
// run conv3d. Forward and backward both inherit the optimized kernels.

namespace volumix {

namespace {

struct ConvDims {
  int64_t cin, cout, d, h, w;
  int64_t kd, kh, kw;
  int64_t od, oh, ow;
  int64_t groups, cin_g, cout_g;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, const Conv3dOpts& o) {
  if (xs.size() != 4) throw ShapeError("conv3d: input must be (C,D,H,W), got " + str(xs));
  if (ws.size() != 5) throw ShapeError("conv3d: weight must be (Cout,Cin/g,kd,kh,kw), got " + str(ws));
  ConvDims c{};
  c.cin = xs[0];
  c.d = xs[1];
  c.h = xs[2];
  c.w = xs[3];
  c.cout = ws[0];
  c.kd = ws[2];
  c.kh = ws[3];
  c.kw = ws[4];
  c.groups = o.groups;
  if (c.groups < 1 || c.cin % c.groups || c.cout % c.groups) {
    throw ShapeError("conv3d: groups " + std::to_string(o.groups) + " does not divide channels of " +
                     str(xs) + " / " + str(ws));
  }
  c.cin_g = c.cin / c.groups;
  c.cout_g = c.cout / c.groups;
  if (ws[1] != c.cin_g) {
    throw ShapeError("conv3d: weight " + str(ws) + " inconsistent with input " + str(xs) +
                     " at groups " + std::to_string(o.groups));
  }
  int64_t pd = o.pad[0], ph = o.pad[1], pw = o.pad[2];
  int64_t sd = o.stride[0], sh = o.stride[1], sw = o.stride[2];
  if (sd < 1 || sh < 1 || sw < 1) throw ShapeError("conv3d: stride must be >= 1");
  if (c.kd > c.d + 2 * pd || c.kh > c.h + 2 * ph || c.kw > c.w + 2 * pw) {
    throw ShapeError("conv3d: kernel " + str(ws) + " larger than padded input " + str(xs));
  }
  c.od = (c.d + 2 * pd - c.kd) / sd + 1;
  c.oh = (c.h + 2 * ph - c.kh) / sh + 1;
  c.ow = (c.w + 2 * pw - c.kw) / sw + 1;
  return c;
}

// Output positions o (in [0, out_extent)) whose source z = o*s + k - p lies
// inside [0, in_extent).
inline void tap_range(int64_t k, int64_t p, int64_t s, int64_t in_extent, int64_t out_extent,
                      int64_t& lo, int64_t& hi) {
  const int64_t shift = k - p;
  lo = shift < 0 ? (-shift + s - 1) / s : 0;
  const int64_t mx = in_extent - 1 - shift;
  hi = mx < 0 ? 0 : std::min(out_extent, mx / s + 1);
  if (hi < lo) hi = lo;
}

// Patch matrix for one output depth slice: rows ordered (ci_local, kd, kh, kw),
// columns ordered (oh, ow). Out-of-range taps contribute explicit zeros.
template <typename S>
void im2col_slice(const S* x, const ConvDims& c, const Conv3dOpts& o, int64_t g, int64_t od,
                  S* patch) {
  int64_t pd = o.pad[0], ph = o.pad[1], pw = o.pad[2];
  int64_t sd = o.stride[0], sh = o.stride[1], sw = o.stride[2];
  int64_t npos = c.oh * c.ow;
  int64_t row = 0;
  for (int64_t ci = 0; ci < c.cin_g; ++ci) {
    const S* xc = x + (g * c.cin_g + ci) * c.d * c.h * c.w;
    for (int64_t kd = 0; kd < c.kd; ++kd) {
      int64_t zd = od * sd + kd - pd;
      bool dok = zd >= 0 && zd < c.d;
      for (int64_t kh = 0; kh < c.kh; ++kh) {
        for (int64_t kw = 0; kw < c.kw; ++kw, ++row) {
          S* dst = patch + row * npos;
          if (!dok) {
            std::fill(dst, dst + npos, S(0));
            continue;
          }
          for (int64_t oh = 0; oh < c.oh; ++oh) {
            int64_t zh = oh * sh + kh - ph;
            if (zh < 0 || zh >= c.h) {
              std::fill(dst + oh * c.ow, dst + (oh + 1) * c.ow, S(0));
              continue;
            }
            const S* src = xc + (zd * c.h + zh) * c.w;
            for (int64_t ow = 0; ow < c.ow; ++ow) {
              int64_t zw = ow * sw + kw - pw;
              dst[oh * c.ow + ow] = (zw >= 0 && zw < c.w) ? src[zw] : S(0);
            }
          }
        }
      }
    }
  }
}

template <typename S>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Blocked-GEMM convolution over plain buffers: one im2col + GEMM per
// (group, output depth) task. Reduction order is Eigen's, not the reference
// chain, so this only serves the float (training-precision) paths.
template <typename S>
void conv_gemm_buffers(const S* xp, const S* wp, const S* bp, const ConvDims& c,
                       const Conv3dOpts& o, S* out) {
  const int64_t kvol = c.kd * c.kh * c.kw;
  const int64_t kdim = c.cin_g * kvol;
  const int64_t npos = c.oh * c.ow;
  parallel_for(c.groups * c.od, [&](int64_t task) {
    const int64_t g = task / c.od;
    const int64_t od = task % c.od;
    std::vector<S> patch(static_cast<size_t>(kdim * npos));
    im2col_slice(xp, c, o, g, od, patch.data());
    std::vector<S> so(static_cast<size_t>(c.cout_g * npos));
    CMatMap<S> W(wp + g * c.cout_g * kdim, c.cout_g, kdim);
    CMatMap<S> P(patch.data(), kdim, npos);
    MatMap<S> O(so.data(), c.cout_g, npos);
    O.noalias() = W * P;
    for (int64_t i = 0; i < c.cout_g; ++i) {
      const int64_t co = g * c.cout_g + i;
      S* dst = out + (co * c.od + od) * npos;
      const S* src = so.data() + i * npos;
      const S b = bp ? bp[co] : S(0);
      for (int64_t q = 0; q < npos; ++q) dst[q] = src[q] + b;
    }
  });
}

}  // namespace

template <typename S>
std::vector<S> conv3d_reference(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                                const Conv3dOpts& o, Shape* out_shape) {
  ConvDims c = conv_dims(x.shape(), w.shape(), o);
  if (bias.defined() && !(bias.dim() == 1 && bias.shape()[0] == c.cout)) {
    throw ShapeError("conv3d: bias " + str(bias.shape()) + " vs weight " + str(w.shape()));
  }
  int64_t pd = o.pad[0], ph = o.pad[1], pw = o.pad[2];
  int64_t sd = o.stride[0], sh = o.stride[1], sw = o.stride[2];
  std::vector<S> out(static_cast<size_t>(c.cout * c.od * c.oh * c.ow));
  const S* xp = x.data();
  const S* wp = w.data();
  for (int64_t co = 0; co < c.cout; ++co) {
    int64_t g = co / c.cout_g;
    const S* wco = wp + co * c.cin_g * c.kd * c.kh * c.kw;
    S b = bias.defined() ? bias.data()[co] : S(0);
    for (int64_t od = 0; od < c.od; ++od) {
      for (int64_t oh = 0; oh < c.oh; ++oh) {
        for (int64_t ow = 0; ow < c.ow; ++ow) {
          S acc = b;
          int64_t t = 0;
          for (int64_t ci = 0; ci < c.cin_g; ++ci) {
            const S* xc = xp + (g * c.cin_g + ci) * c.d * c.h * c.w;
            for (int64_t kd = 0; kd < c.kd; ++kd) {
              int64_t zd = od * sd + kd - pd;
              for (int64_t kh = 0; kh < c.kh; ++kh) {
                int64_t zh = oh * sh + kh - ph;
                for (int64_t kw = 0; kw < c.kw; ++kw, ++t) {
                  int64_t zw = ow * sw + kw - pw;
                  S xv = (zd >= 0 && zd < c.d && zh >= 0 && zh < c.h && zw >= 0 && zw < c.w)
                             ? xc[(zd * c.h + zh) * c.w + zw]
                             : S(0);
                  acc = std::fma(wco[t], xv, acc);
                }
              }
            }
          }
          out[static_cast<size_t>(((co * c.od + od) * c.oh + oh) * c.ow + ow)] = acc;
        }
      }
    }
  }
  if (out_shape) *out_shape = {c.cout, c.od, c.oh, c.ow};
  return out;
}

template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 const Conv3dOpts& o) {
  ConvDims c = conv_dims(x.shape(), w.shape(), o);
  if (bias.defined() && !(bias.dim() == 1 && bias.shape()[0] == c.cout)) {
    throw ShapeError("conv3d: bias " + str(bias.shape()) + " vs weight " + str(w.shape()));
  }
  Shape out_shape{c.cout, c.od, c.oh, c.ow};
  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  const int64_t kvol = c.kd * c.kh * c.kw;
  const int64_t kdim = c.cin_g * kvol;
  const int64_t npos = c.oh * c.ow;
  const S* xp = x.data();
  const S* wp = w.data();
  const S* bp = bias.defined() ? bias.data() : nullptr;
  Conv3dOpts opts = o;
  const int64_t pd = o.pad[0], ph = o.pad[1], pw_ = o.pad[2];
  const int64_t sd = o.stride[0], sh = o.stride[1], sw = o.stride[2];

  // Training precision trades the reference's exact accumulation order for a
  // blocked GEMM; verify precision (double) keeps the bitwise-identical chain.
  if (std::is_same_v<S, float> && c.cout_g >= 8 && kdim >= 64) {
    conv_gemm_buffers(xp, wp, bp, c, opts, out.data());
  } else {
  parallel_for(c.cout * c.od, [&](int64_t task) {
    const int64_t co = task / c.od;
    const int64_t od = task % c.od;
    const int64_t g = co / c.cout_g;
    S* dst = out.data() + (co * c.od + od) * npos;
    std::fill(dst, dst + npos, bp ? bp[co] : S(0));
    const S* wco = wp + co * kdim;
    for (int64_t ci = 0; ci < c.cin_g; ++ci) {
      const S* xc = xp + (g * c.cin_g + ci) * c.d * c.h * c.w;
      const S* wci = wco + ci * kvol;
      for (int64_t kd = 0; kd < c.kd; ++kd) {
        const int64_t zd = od * sd + kd - pd;
        if (zd < 0 || zd >= c.d) continue;
        for (int64_t kh = 0; kh < c.kh; ++kh) {
          int64_t hlo, hhi;
          tap_range(kh, ph, sh, c.h, c.oh, hlo, hhi);
          for (int64_t kw = 0; kw < c.kw; ++kw) {
            const S wv = wci[(kd * c.kh + kh) * c.kw + kw];
            int64_t wlo, whi;
            tap_range(kw, pw_, sw, c.w, c.ow, wlo, whi);
            for (int64_t oh = hlo; oh < hhi; ++oh) {
              const S* xrow = xc + (zd * c.h + oh * sh + kh - ph) * c.w;
              S* orow = dst + oh * c.ow;
              if (sw == 1) {
                const S* xoff = xrow + kw - pw_;
                for (int64_t ow = wlo; ow < whi; ++ow) {
                  orow[ow] = std::fma(wv, xoff[ow], orow[ow]);
                }
              } else {
                for (int64_t ow = wlo; ow < whi; ++ow) {
                  orow[ow] = std::fma(wv, xrow[ow * sw + kw - pw_], orow[ow]);
                }
              }
            }
          }
        }
      }
    }
  });
  }

  std::vector<Tensor<S>> parents =
      bias.defined() ? std::vector<Tensor<S>>{x, w, bias} : std::vector<Tensor<S>>{x, w};
  return make_node<S>("conv3d", out_shape, std::move(out), parents, [c, opts](Node<S>& n) {
    const int64_t kvol = c.kd * c.kh * c.kw;
    const int64_t kdim = c.cin_g * kvol;
    const int64_t npos = c.oh * c.ow;
    int64_t pd = opts.pad[0], ph = opts.pad[1], pw = opts.pad[2];
    int64_t sd = opts.stride[0], sh = opts.stride[1], sw = opts.stride[2];
    auto& px = *n.parents[0];
    auto& pw_ = *n.parents[1];

    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      auto& gb = n.parents[2]->grad;
      parallel_for(c.cout, [&](int64_t co) {
        S acc = S(0);
        const S* g = n.grad.data() + co * c.od * npos;
        for (int64_t i = 0; i < c.od * npos; ++i) acc += g[i];
        gb[static_cast<size_t>(co)] += acc;
      });
    }

    if (pw_.requires_grad) {
      // dW[g] = sum over depth slices of G_slice * P_slice^T, reduced in slice order.
      for (int64_t g = 0; g < c.groups; ++g) {
        std::vector<std::vector<S>> partials(static_cast<size_t>(c.od));
        parallel_for(c.od, [&](int64_t od) {
          std::vector<S> patch(static_cast<size_t>(kdim * npos));
          im2col_slice(px.value.data(), c, opts, g, od, patch.data());
          std::vector<S> gs(static_cast<size_t>(c.cout_g * npos));
          for (int64_t i = 0; i < c.cout_g; ++i) {
            int64_t co = g * c.cout_g + i;
            std::copy(n.grad.begin() + (co * c.od + od) * npos,
                      n.grad.begin() + (co * c.od + od + 1) * npos, gs.begin() + i * npos);
          }
          std::vector<S> part(static_cast<size_t>(c.cout_g * kdim));
          CMatMap<S> G(gs.data(), c.cout_g, npos);
          CMatMap<S> P(patch.data(), kdim, npos);
          MatMap<S> DW(part.data(), c.cout_g, kdim);
          DW.noalias() = G * P.transpose();
          partials[static_cast<size_t>(od)] = std::move(part);
        });
        S* dw = pw_.grad.data() + g * c.cout_g * kdim;
        for (int64_t od = 0; od < c.od; ++od) {
          const auto& part = partials[static_cast<size_t>(od)];
          for (int64_t i = 0; i < c.cout_g * kdim; ++i) dw[i] += part[static_cast<size_t>(i)];
        }
      }
    }

    // For stride 1 the input gradient is itself a convolution of the output
    // gradient with the channel-swapped, kernel-flipped weight, so the float
    // path can reuse the blocked GEMM.
    const bool grad_gemm = std::is_same_v<S, float> && sd == 1 && sh == 1 && sw == 1 &&
                           pd < c.kd && ph < c.kh && pw < c.kw && c.cin_g >= 8 &&
                           c.cout_g * kvol >= 64;
    if (px.requires_grad && grad_gemm) {
      std::vector<S> w2(static_cast<size_t>(c.cout * c.cin_g * kvol));
      for (int64_t ci = 0; ci < c.cin; ++ci) {
        const int64_t g = ci / c.cin_g;
        const int64_t ci_local = ci % c.cin_g;
        for (int64_t co_local = 0; co_local < c.cout_g; ++co_local) {
          const int64_t co = g * c.cout_g + co_local;
          const S* src = pw_.value.data() + (co * c.cin_g + ci_local) * kvol;
          S* dst = w2.data() + (ci * c.cout_g + co_local) * kvol;
          for (int64_t kd = 0; kd < c.kd; ++kd) {
            for (int64_t kh = 0; kh < c.kh; ++kh) {
              for (int64_t kw = 0; kw < c.kw; ++kw) {
                dst[((c.kd - 1 - kd) * c.kh + (c.kh - 1 - kh)) * c.kw + (c.kw - 1 - kw)] =
                    src[(kd * c.kh + kh) * c.kw + kw];
              }
            }
          }
        }
      }
      ConvDims c2{};
      c2.cin = c.cout;
      c2.d = c.od;
      c2.h = c.oh;
      c2.w = c.ow;
      c2.cout = c.cin;
      c2.kd = c.kd;
      c2.kh = c.kh;
      c2.kw = c.kw;
      c2.od = c.d;
      c2.oh = c.h;
      c2.ow = c.w;
      c2.groups = c.groups;
      c2.cin_g = c.cout_g;
      c2.cout_g = c.cin_g;
      Conv3dOpts o2;
      o2.groups = opts.groups;
      o2.pad[0] = static_cast<int>(c.kd - 1 - pd);
      o2.pad[1] = static_cast<int>(c.kh - 1 - ph);
      o2.pad[2] = static_cast<int>(c.kw - 1 - pw);
      std::vector<S> dx(px.value.size());
      conv_gemm_buffers(n.grad.data(), w2.data(), static_cast<const S*>(nullptr), c2, o2,
                        dx.data());
      const int64_t plane = c.d * c.h * c.w;
      parallel_for(c.cin, [&](int64_t ci) {
        S* gx = px.grad.data() + ci * plane;
        const S* d = dx.data() + ci * plane;
        for (int64_t q = 0; q < plane; ++q) gx[q] += d[q];
      });
    } else if (px.requires_grad) {
      // dX scatter: each task owns one input channel; per kernel tap, a row of
      // output gradients fma-accumulates into the matching input-gradient row.
      parallel_for(c.cin, [&](int64_t ci) {
        const int64_t g = ci / c.cin_g;
        const int64_t ci_local = ci % c.cin_g;
        S* gx = px.grad.data() + ci * c.d * c.h * c.w;
        for (int64_t i = 0; i < c.cout_g; ++i) {
          const int64_t co = g * c.cout_g + i;
          const S* wt = pw_.value.data() + (co * c.cin_g + ci_local) * kvol;
          const S* gout = n.grad.data() + co * c.od * npos;
          for (int64_t kd = 0; kd < c.kd; ++kd) {
            int64_t dlo, dhi;
            tap_range(kd, pd, sd, c.d, c.od, dlo, dhi);
            for (int64_t kh = 0; kh < c.kh; ++kh) {
              int64_t hlo, hhi;
              tap_range(kh, ph, sh, c.h, c.oh, hlo, hhi);
              for (int64_t kw = 0; kw < c.kw; ++kw) {
                const S wv = wt[(kd * c.kh + kh) * c.kw + kw];
                int64_t wlo, whi;
                tap_range(kw, pw, sw, c.w, c.ow, wlo, whi);
                for (int64_t od = dlo; od < dhi; ++od) {
                  const int64_t zd = od * sd + kd - pd;
                  for (int64_t oh = hlo; oh < hhi; ++oh) {
                    const int64_t zh = oh * sh + kh - ph;
                    const S* grow = gout + (od * c.oh + oh) * c.ow;
                    S* xrow = gx + (zd * c.h + zh) * c.w;
                    if (sw == 1) {
                      S* xoff = xrow + kw - pw;
                      for (int64_t ow = wlo; ow < whi; ++ow) {
                        xoff[ow] = std::fma(wv, grow[ow], xoff[ow]);
                      }
                    } else {
                      for (int64_t ow = wlo; ow < whi; ++ow) {
                        xrow[ow * sw + kw - pw] = std::fma(wv, grow[ow], xrow[ow * sw + kw - pw]);
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
    }
  });
}

// ---- transposed conv ----

namespace {

struct ConvTDims {
  int64_t cin, cout, d, h, w;
  int64_t kd, kh, kw;
  int64_t od, oh, ow;
  int64_t groups, cin_g, cout_g;
};

ConvTDims convt_dims(const Shape& xs, const Shape& ws, const ConvT3dOpts& o) {
  if (xs.size() != 4) throw ShapeError("conv_transpose3d: input must be (C,D,H,W), got " + str(xs));
  if (ws.size() != 5) {
    throw ShapeError("conv_transpose3d: weight must be (Cin,Cout/g,kd,kh,kw), got " + str(ws));
  }
  ConvTDims c{};
  c.cin = xs[0];
  c.d = xs[1];
  c.h = xs[2];
  c.w = xs[3];
  c.kd = ws[2];
  c.kh = ws[3];
  c.kw = ws[4];
  c.groups = o.groups;
  if (c.groups < 1 || c.cin % c.groups) {
    throw ShapeError("conv_transpose3d: groups do not divide input channels of " + str(xs));
  }
  if (ws[0] != c.cin) {
    throw ShapeError("conv_transpose3d: weight " + str(ws) + " vs input " + str(xs));
  }
  c.cin_g = c.cin / c.groups;
  c.cout_g = ws[1];
  c.cout = c.cout_g * c.groups;
  for (int i = 0; i < 3; ++i) {
    if (o.stride[i] < 1) throw ShapeError("conv_transpose3d: stride must be >= 1");
    if (o.output_pad[i] < 0 || o.output_pad[i] >= o.stride[i]) {
      throw ShapeError("conv_transpose3d: output_pad must be in [0, stride)");
    }
  }
  c.od = (c.d - 1) * o.stride[0] - 2 * o.pad[0] + c.kd + o.output_pad[0];
  c.oh = (c.h - 1) * o.stride[1] - 2 * o.pad[1] + c.kh + o.output_pad[1];
  c.ow = (c.w - 1) * o.stride[2] - 2 * o.pad[2] + c.kw + o.output_pad[2];
  if (c.od < 1 || c.oh < 1 || c.ow < 1) {
    throw ShapeError("conv_transpose3d: empty output for input " + str(xs) + " weight " + str(ws));
  }
  return c;
}

}  // namespace

namespace {

// (C,D,H,W) -> (C, (D-1)*s+1+op, ...): values spread stride apart with zeros
// between and `output_pad` zeros appended at each high edge. Backward gathers
// the occupied positions back.
template <typename S>
Tensor<S> stuff3d(const Tensor<S>& x, const int stride[3], const int opad[3]) {
  const Shape& xs = x.shape();
  const int64_t ch = xs[0], d = xs[1], h = xs[2], w = xs[3];
  const int64_t sd = stride[0], sh = stride[1], sw = stride[2];
  const Shape os{ch, (d - 1) * sd + 1 + opad[0], (h - 1) * sh + 1 + opad[1],
                 (w - 1) * sw + 1 + opad[2]};
  std::vector<S> out(static_cast<size_t>(numel(os)), S(0));
  const int64_t oh_ext = os[2], ow_ext = os[3];
  const S* xp = x.data();
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t z = 0; z < d; ++z) {
      for (int64_t y = 0; y < h; ++y) {
        S* dst = out.data() + ((c * os[1] + z * sd) * oh_ext + y * sh) * ow_ext;
        const S* src = xp + ((c * d + z) * h + y) * w;
        if (sw == 1) {
          std::copy(src, src + w, dst);
        } else {
          for (int64_t q = 0; q < w; ++q) dst[q * sw] = src[q];
        }
      }
    }
  }
  const int64_t csd = sd, csh = sh, csw = sw;
  return make_node<S>("stuff3d", os, std::move(out), {x},
                      [ch, d, h, w, csd, csh, csw, oh_ext, ow_ext](Node<S>& n) {
                        auto& px = *n.parents[0];
                        if (!px.requires_grad) return;
                        const int64_t od_ext = n.shape[1];
                        for (int64_t c = 0; c < ch; ++c) {
                          for (int64_t z = 0; z < d; ++z) {
                            for (int64_t y = 0; y < h; ++y) {
                              const S* g =
                                  n.grad.data() +
                                  ((c * od_ext + z * csd) * oh_ext + y * csh) * ow_ext;
                              S* dst = px.grad.data() + ((c * d + z) * h + y) * w;
                              for (int64_t q = 0; q < w; ++q) dst[q] += g[q * csw];
                            }
                          }
                        }
                      });
}

}  // namespace

template <typename S>
Tensor<S> conv_transpose3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                           const ConvT3dOpts& o) {
  ConvTDims c = convt_dims(x.shape(), w.shape(), o);
  if (bias.defined() && !(bias.dim() == 1 && bias.shape()[0] == c.cout)) {
    throw ShapeError("conv_transpose3d: bias " + str(bias.shape()) + " vs weight " + str(w.shape()));
  }
  Tensor<S> xs = stuff3d(x, o.stride, o.output_pad);
  Tensor<S> wr = reshape(w, {c.groups, c.cin_g, c.cout_g, c.kd, c.kh, c.kw});
  wr = permute(wr, {0, 2, 1, 3, 4, 5});
  wr = reshape(wr, {c.cout, c.cin_g, c.kd, c.kh, c.kw});
  wr = flip(flip(flip(wr, 2), 3), 4);
  // Full correlation needs pad k-1; convT pad then crops the result. Fold as
  // much of the crop as possible into the conv's own padding.
  Conv3dOpts co;
  co.groups = o.groups;
  const int64_t ks[3] = {c.kd, c.kh, c.kw};
  int64_t crop[3];
  bool need_crop = false;
  for (int i = 0; i < 3; ++i) {
    const int64_t p = std::min<int64_t>(o.pad[i], ks[i] - 1);
    co.pad[i] = static_cast<int>(ks[i] - 1 - p);
    crop[i] = o.pad[i] - p;
    need_crop |= crop[i] != 0;
  }
  Tensor<S> y = conv3d(xs, wr, bias, co);
  if (need_crop) {
    y = slice(y, {0, crop[0], crop[1], crop[2]}, {c.cout, c.od, c.oh, c.ow});
  }
  return y;
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.dim() < 2) {
    throw ShapeError("softmax_cross_entropy: logits must be (K, positions...), got " +
                     str(logits.shape()));
  }
  int64_t k = logits.shape()[0];
  int64_t vox = logits.numel() / k;
  if (static_cast<int64_t>(labels.size()) != vox) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels vs logits " + str(logits.shape()));
  }
  const S* p = logits.data();
  double total = 0.0;
  for (int64_t v = 0; v < vox; ++v) {
    int y = labels[static_cast<size_t>(v)];
    if (y < 0 || y >= k) throw DataError("softmax_cross_entropy: label out of range");
    S m = p[v];
    for (int64_t i = 1; i < k; ++i) m = std::max(m, p[i * vox + v]);
    S z = S(0);
    for (int64_t i = 0; i < k; ++i) z += std::exp(p[i * vox + v] - m);
    total += static_cast<double>(m) + std::log(static_cast<double>(z)) -
             static_cast<double>(p[y * vox + v]);
  }
  S loss = static_cast<S>(total / static_cast<double>(vox));
  std::vector<int> labels_c = labels;
  return make_node<S>("softmax_cross_entropy", {1}, {loss}, {logits},
                      [k, vox, labels_c](Node<S>& n) {
                        auto& px = *n.parents[0];
                        const S* p = px.value.data();
                        S g = n.grad[0] / static_cast<S>(vox);
                        for (int64_t v = 0; v < vox; ++v) {
                          S m = p[v];
                          for (int64_t i = 1; i < k; ++i) m = std::max(m, p[i * vox + v]);
                          S z = S(0);
                          for (int64_t i = 0; i < k; ++i) z += std::exp(p[i * vox + v] - m);
                          for (int64_t i = 0; i < k; ++i) {
                            S soft = std::exp(p[i * vox + v] - m) / z;
                            S ind = (labels_c[static_cast<size_t>(v)] == i) ? S(1) : S(0);
                            px.grad[static_cast<size_t>(i * vox + v)] += g * (soft - ind);
                          }
                        }
                      });
}

#define VOLUMIX_INST(S)                                                                     \
  template std::vector<S> conv3d_reference(const Tensor<S>&, const Tensor<S>&,              \
                                           const Tensor<S>&, const Conv3dOpts&, Shape*);    \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,           \
                            const Conv3dOpts&);                                             \
  template Tensor<S> conv_transpose3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                      const ConvT3dOpts&);                                  \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, const std::vector<int>&);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
