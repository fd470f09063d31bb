#include <cmath>

#include "volumix/seqmix.hpp"

namespace volumix {

namespace {

template <typename S>
void check_seq(const Tensor<S>& x) {
  if (!x.defined() || x.dim() != 2) {
    throw ShapeError("sequence batch must be (L, d), got " +
                     (x.defined() ? str(x.shape()) : std::string("undefined")));
  }
}

}  // namespace

template <typename S>
Tensor<S> ssm_scan(const Tensor<S>& x, const RealizedSsm<S>& p) {
  check_seq(x);
  const int64_t L = x.shape()[0], d = x.shape()[1];
  if (p.abar.shape() != x.shape() || p.dt.shape() != x.shape()) {
    throw ShapeError("ssm_scan: abar/dt " + str(p.abar.shape()) + " vs x " + str(x.shape()));
  }
  if (p.B.dim() != 2 || p.B.shape()[0] != L || p.C.shape() != p.B.shape()) {
    throw ShapeError("ssm_scan: B " + str(p.B.shape()) + " / C " + str(p.C.shape()) +
                     " vs x " + str(x.shape()));
  }
  if (p.D.shape() != Shape{d}) {
    throw ShapeError("ssm_scan: D " + str(p.D.shape()) + " vs x " + str(x.shape()));
  }
  const int64_t N = p.B.shape()[1];

  std::vector<S> h(static_cast<size_t>(L * d * N));
  std::vector<S> y(static_cast<size_t>(L * d));
  {
    const S* xv = x.data();
    const S* ab = p.abar.data();
    const S* dtv = p.dt.data();
    const S* Bv = p.B.data();
    const S* Cv = p.C.data();
    const S* Dv = p.D.data();
    parallel_for(d, [&](int64_t c) {
      std::vector<S> hprev(static_cast<size_t>(N), S(0));
      for (int64_t t = 0; t < L; ++t) {
        S xtc = xv[t * d + c];
        S abv = ab[t * d + c];
        S step = dtv[t * d + c] * xtc;
        S acc = Dv[c] * xtc;
        for (int64_t n = 0; n < N; ++n) {
          S hn = abv * hprev[static_cast<size_t>(n)] + Bv[t * N + n] * step;
          h[static_cast<size_t>((t * d + c) * N + n)] = hn;
          hprev[static_cast<size_t>(n)] = hn;
          acc += Cv[t * N + n] * hn;
        }
        y[static_cast<size_t>(t * d + c)] = acc;
      }
    });
  }

  return make_node<S>(
      "ssm_scan", {L, d}, std::move(y), {x, p.abar, p.dt, p.B, p.C, p.D},
      [L, d, N, hist = std::move(h)](Node<S>& n) {
        auto& px = *n.parents[0];
        auto& pab = *n.parents[1];
        auto& pdt = *n.parents[2];
        auto& pB = *n.parents[3];
        auto& pC = *n.parents[4];
        auto& pD = *n.parents[5];
        const S* dy = n.grad.data();
        const S* xv = px.value.data();
        const S* ab = pab.value.data();
        const S* dtv = pdt.value.data();
        const S* Bv = pB.value.data();
        const S* Cv = pC.value.data();
        const S* Dv = pD.value.data();
        std::vector<S> g(static_cast<size_t>(N));
        for (int64_t c = 0; c < d; ++c) {
          for (int64_t t = L - 1; t >= 0; --t) {
            S dyv = dy[t * d + c];
            if (t == L - 1) {
              for (int64_t n = 0; n < N; ++n) g[static_cast<size_t>(n)] = dyv * Cv[t * N + n];
            } else {
              S abn = ab[(t + 1) * d + c];
              for (int64_t n = 0; n < N; ++n) {
                g[static_cast<size_t>(n)] = dyv * Cv[t * N + n] + abn * g[static_cast<size_t>(n)];
              }
            }
            S xtc = xv[t * d + c];
            S dttc = dtv[t * d + c];
            S gB = S(0);
            for (int64_t n = 0; n < N; ++n) gB += g[static_cast<size_t>(n)] * Bv[t * N + n];
            if (pab.requires_grad && t > 0) {
              S s = S(0);
              for (int64_t n = 0; n < N; ++n) {
                s += g[static_cast<size_t>(n)] * hist[static_cast<size_t>(((t - 1) * d + c) * N + n)];
              }
              pab.grad[static_cast<size_t>(t * d + c)] += s;
            }
            if (pdt.requires_grad) pdt.grad[static_cast<size_t>(t * d + c)] += gB * xtc;
            if (px.requires_grad) {
              px.grad[static_cast<size_t>(t * d + c)] += gB * dttc + Dv[c] * dyv;
            }
            if (pB.requires_grad) {
              for (int64_t n = 0; n < N; ++n) {
                pB.grad[static_cast<size_t>(t * N + n)] += g[static_cast<size_t>(n)] * dttc * xtc;
              }
            }
            if (pC.requires_grad) {
              for (int64_t n = 0; n < N; ++n) {
                pC.grad[static_cast<size_t>(t * N + n)] +=
                    dyv * hist[static_cast<size_t>((t * d + c) * N + n)];
              }
            }
            if (pD.requires_grad) pD.grad[static_cast<size_t>(c)] += dyv * xtc;
          }
        }
      });
}

template <typename S>
std::vector<S> materialize_semiseparable(const RealizedSsm<S>& p) {
  if (!p.abar.defined() || p.abar.dim() != 2 || p.abar.shape()[0] < 1) {
    throw ShapeError("materialize_semiseparable: need (L, d) coefficients with L >= 1");
  }
  const int64_t L = p.abar.shape()[0], d = p.abar.shape()[1], N = p.B.shape()[1];
  const S* ab = p.abar.data();
  const S* dtv = p.dt.data();
  const S* Bv = p.B.data();
  const S* Cv = p.C.data();
  const S* Dv = p.D.data();
  std::vector<S> m(static_cast<size_t>(d * L * L), S(0));
  for (int64_t c = 0; c < d; ++c) {
    S* mc = m.data() + c * L * L;
    for (int64_t j = 0; j < L; ++j) {
      S prod = S(1);
      for (int64_t i = j; i < L; ++i) {
        if (i > j) prod *= ab[i * d + c];
        S cb = S(0);
        for (int64_t n = 0; n < N; ++n) cb += Cv[i * N + n] * Bv[j * N + n];
        mc[i * L + j] = prod * dtv[j * d + c] * cb;
      }
      mc[j * L + j] += Dv[c];
    }
  }
  return m;
}

template <typename S>
SsmParams<S> make_ssm_params(ParamStore<S>& store, const std::string& prefix, int64_t d,
                             int64_t n, SplitMix64& rng) {
  SsmParams<S> p;
  p.a = store.add_full(prefix + ".a", {d}, S(1));
  p.W_dt = store.add_uniform(prefix + ".w_dt", {d, d}, d, rng);
  p.b_dt = store.add_zeros(prefix + ".b_dt", {d});
  p.W_B = store.add_uniform(prefix + ".w_b", {n, d}, d, rng);
  p.W_C = store.add_uniform(prefix + ".w_c", {n, d}, d, rng);
  p.D = store.add_full(prefix + ".d_skip", {d}, S(1));
  return p;
}

template <typename S>
RealizedSsm<S> realize_ssm(const SsmParams<S>& p, const Tensor<S>& x) {
  check_seq(x);
  const int64_t L = x.shape()[0];
  RealizedSsm<S> r;
  r.dt = softplus(linear(x, p.W_dt, p.b_dt));
  r.abar = exp(neg(mul(expand_axis0(softplus(p.a), L), r.dt)));
  r.B = linear(x, p.W_B, Tensor<S>());
  r.C = linear(x, p.W_C, Tensor<S>());
  r.D = p.D;
  return r;
}

template <typename S>
Tensor<S> ssm_mix(const Tensor<S>& x, const SsmParams<S>& p) {
  return ssm_scan(x, realize_ssm(p, x));
}

template <typename S>
Tensor<S> hydra_branch_scan(const Tensor<S>& x, const Tensor<S>& A, const Tensor<S>& b,
                            const Tensor<S>& c) {
  check_seq(x);
  const int64_t L = x.shape()[0], d = x.shape()[1];
  if (A.dim() != 3 || A.shape()[0] != L || A.shape()[1] != d) {
    throw ShapeError("hydra_branch_scan: A " + str(A.shape()) + " vs x " + str(x.shape()));
  }
  const int64_t N = A.shape()[2];
  if (b.shape() != Shape{L, N} || c.shape() != Shape{L, N}) {
    throw ShapeError("hydra_branch_scan: b " + str(b.shape()) + " / c " + str(c.shape()) +
                     " vs A " + str(A.shape()));
  }

  std::vector<S> h(static_cast<size_t>(L * d * N));
  std::vector<S> y(static_cast<size_t>(L * d));
  {
    const S* xv = x.data();
    const S* Av = A.data();
    const S* bv = b.data();
    const S* cv = c.data();
    parallel_for(d, [&](int64_t ch) {
      std::vector<S> hprev(static_cast<size_t>(N), S(0));
      for (int64_t t = 0; t < L; ++t) {
        S xtc = xv[t * d + ch];
        S acc = S(0);
        for (int64_t n = 0; n < N; ++n) {
          S hn = Av[(t * d + ch) * N + n] * hprev[static_cast<size_t>(n)] + bv[t * N + n] * xtc;
          h[static_cast<size_t>((t * d + ch) * N + n)] = hn;
          hprev[static_cast<size_t>(n)] = hn;
          acc += cv[t * N + n] * hn;
        }
        y[static_cast<size_t>(t * d + ch)] = acc;
      }
    });
  }

  return make_node<S>(
      "hydra_branch_scan", {L, d}, std::move(y), {x, A, b, c},
      [L, d, N, hist = std::move(h)](Node<S>& n) {
        auto& px = *n.parents[0];
        auto& pA = *n.parents[1];
        auto& pb = *n.parents[2];
        auto& pc = *n.parents[3];
        const S* dy = n.grad.data();
        const S* xv = px.value.data();
        const S* Av = pA.value.data();
        const S* bv = pb.value.data();
        const S* cv = pc.value.data();
        std::vector<S> g(static_cast<size_t>(N));
        for (int64_t ch = 0; ch < d; ++ch) {
          for (int64_t t = L - 1; t >= 0; --t) {
            S dyv = dy[t * d + ch];
            if (t == L - 1) {
              for (int64_t n = 0; n < N; ++n) g[static_cast<size_t>(n)] = dyv * cv[t * N + n];
            } else {
              for (int64_t n = 0; n < N; ++n) {
                g[static_cast<size_t>(n)] =
                    dyv * cv[t * N + n] + Av[((t + 1) * d + ch) * N + n] * g[static_cast<size_t>(n)];
              }
            }
            S xtc = xv[t * d + ch];
            if (pA.requires_grad && t > 0) {
              for (int64_t n = 0; n < N; ++n) {
                pA.grad[static_cast<size_t>((t * d + ch) * N + n)] +=
                    g[static_cast<size_t>(n)] * hist[static_cast<size_t>(((t - 1) * d + ch) * N + n)];
              }
            }
            if (px.requires_grad) {
              S gb = S(0);
              for (int64_t n = 0; n < N; ++n) gb += g[static_cast<size_t>(n)] * bv[t * N + n];
              px.grad[static_cast<size_t>(t * d + ch)] += gb;
            }
            if (pb.requires_grad) {
              for (int64_t n = 0; n < N; ++n) {
                pb.grad[static_cast<size_t>(t * N + n)] += g[static_cast<size_t>(n)] * xtc;
              }
            }
            if (pc.requires_grad) {
              for (int64_t n = 0; n < N; ++n) {
                pc.grad[static_cast<size_t>(t * N + n)] +=
                    dyv * hist[static_cast<size_t>((t * d + ch) * N + n)];
              }
            }
          }
        }
      });
}

namespace {

// (L, N) -> (L, d, N): every channel sees the same per-token coefficients.
template <typename S>
Tensor<S> lift_shared(const Tensor<S>& t, int64_t d) {
  return permute(expand_axis0(t, d), {1, 0, 2});
}

// (L, d) -> (L, d, N): per-channel scalar replicated across the state.
template <typename S>
Tensor<S> lift_channel(const Tensor<S>& t, int64_t n) {
  const int64_t L = t.shape()[0], d = t.shape()[1];
  return reshape(expand_rest(reshape(t, {L * d}), {n}), {L, d, n});
}

// t'_i = t_{i+1}, zero at the end (the output projections are read one token
// ahead so that the later zero-padded shift realigns them).
template <typename S>
Tensor<S> roll_next(const Tensor<S>& t) {
  return flip(shift_one(flip(t, 0), 0), 0);
}

// Single fused pass over the sequence, used when gradients are off.  It
// performs the same per-element arithmetic in the same order as the composed
// graph below (branch scans, shifts, flips, final adds), so its output is
// bitwise identical; it only skips the intermediate tensors and graph nodes.
template <typename S>
Tensor<S> quasi_fused_nograd(const Tensor<S>& x, const Tensor<S>& fA3, const Tensor<S>& fb,
                             const Tensor<S>& fc, const Tensor<S>& bA3, const Tensor<S>& bb,
                             const Tensor<S>& bc, const Tensor<S>& delta_ld) {
  const int64_t L = x.shape()[0], d = x.shape()[1], N = fA3.shape()[2];
  std::vector<S> y(static_cast<size_t>(L * d));
  const S* xv = x.data();
  const S* fAv = fA3.data();
  const S* fbv = fb.data();
  const S* fcv = fc.data();
  const S* bAv = bA3.data();
  const S* bbv = bb.data();
  const S* bcv = bc.data();
  const S* dlv = delta_ld.data();
  parallel_for(d, [&](int64_t ch) {
    std::vector<S> hprev(static_cast<size_t>(N), S(0));
    // Strictly-lower part: y[t+1] gets sum_n fc[t+1,n] * h_state_after_token_t.
    y[static_cast<size_t>(0 * d + ch)] = S(0);
    for (int64_t t = 0; t < L; ++t) {
      S xtc = xv[t * d + ch];
      S acc = S(0);
      for (int64_t n = 0; n < N; ++n) {
        S hn = fAv[(t * d + ch) * N + n] * hprev[static_cast<size_t>(n)] + fbv[t * N + n] * xtc;
        hprev[static_cast<size_t>(n)] = hn;
        if (t + 1 < L) acc += fcv[(t + 1) * N + n] * hn;
      }
      if (t + 1 < L) y[static_cast<size_t>((t + 1) * d + ch)] = acc;
    }
    // Strictly-upper part, scanned in reverse: y[u-1] += sum_n bb[u-1,n] * h_state_after_u.
    std::fill(hprev.begin(), hprev.end(), S(0));
    for (int64_t u = L - 1; u >= 0; --u) {
      S xtc = xv[u * d + ch];
      S acc = S(0);
      for (int64_t n = 0; n < N; ++n) {
        S hn = bAv[(u * d + ch) * N + n] * hprev[static_cast<size_t>(n)] + bcv[u * N + n] * xtc;
        hprev[static_cast<size_t>(n)] = hn;
        if (u >= 1) acc += bbv[(u - 1) * N + n] * hn;
      }
      if (u >= 1) y[static_cast<size_t>((u - 1) * d + ch)] += acc;
    }
    y[static_cast<size_t>((L - 1) * d + ch)] += S(0);  // zero pad of the shifted upper branch
    for (int64_t t = 0; t < L; ++t) {
      y[static_cast<size_t>(t * d + ch)] += dlv[t * d + ch] * xv[t * d + ch];
    }
  });
  return make_node<S>("quasi_fused", {L, d}, std::move(y), {}, nullptr);
}

template <typename S>
Tensor<S> quasi_compose(const Tensor<S>& x, const Tensor<S>& fA3, const Tensor<S>& fb,
                        const Tensor<S>& fc, const Tensor<S>& bA3, const Tensor<S>& bb,
                        const Tensor<S>& bc, const Tensor<S>& delta_ld) {
  if (!grad_enabled()) {
    return quasi_fused_nograd(x, fA3, fb, fc, bA3, bb, bc, delta_ld);
  }
  auto t1 = shift_one(hydra_branch_scan(x, fA3, fb, roll_next(fc)), 0);
  auto xr = flip(x, 0);
  auto bwd = hydra_branch_scan(xr, flip(bA3, 0), flip(bc, 0), roll_next(flip(bb, 0)));
  auto t2 = flip(shift_one(bwd, 0), 0);
  return add(add(t1, t2), mul(delta_ld, x));
}

}  // namespace

template <typename S>
Tensor<S> quasiseparable_matmul(const Tensor<S>& x, const QuasiParams<S>& q) {
  check_seq(x);
  const int64_t L = x.shape()[0], d = x.shape()[1];
  if (q.fA.dim() != 2 || q.fA.shape()[0] != L) {
    throw ShapeError("quasiseparable_matmul: params have length " +
                     (q.fA.defined() ? std::to_string(q.fA.shape()[0]) : std::string("?")) +
                     " but x is " + str(x.shape()));
  }
  const int64_t N = q.fA.shape()[1];
  for (const Tensor<S>* t : {&q.fb, &q.fc, &q.bA, &q.bb, &q.bc}) {
    if (t->shape() != Shape{L, N}) {
      throw ShapeError("quasiseparable_matmul: triple entry " + str(t->shape()) +
                       " vs fA " + str(q.fA.shape()));
    }
  }
  if (q.delta.shape() != Shape{L}) {
    throw ShapeError("quasiseparable_matmul: delta " + str(q.delta.shape()) + " vs length " +
                     std::to_string(L));
  }
  return quasi_compose(x, lift_shared(q.fA, d), q.fb, q.fc, lift_shared(q.bA, d), q.bb, q.bc,
                       expand_rest(q.delta, {d}));
}

template <typename S>
std::vector<S> quasiseparable_materialize(const QuasiParams<S>& q) {
  const int64_t L = q.fA.shape()[0], N = q.fA.shape()[1];
  const S* fA = q.fA.data();
  const S* fb = q.fb.data();
  const S* fc = q.fc.data();
  const S* bA = q.bA.data();
  const S* bb = q.bb.data();
  const S* bc = q.bc.data();
  const S* dl = q.delta.data();
  std::vector<S> m(static_cast<size_t>(L * L), S(0));
  for (int64_t i = 0; i < L; ++i) m[static_cast<size_t>(i * L + i)] = dl[i];
  std::vector<S> prod(static_cast<size_t>(N));
  for (int64_t j = 0; j < L; ++j) {  // lower: m_ij = fc_i^T (prod strictly between) fb_j
    std::fill(prod.begin(), prod.end(), S(1));
    for (int64_t i = j + 1; i < L; ++i) {
      S e = S(0);
      for (int64_t n = 0; n < N; ++n) e += fc[i * N + n] * prod[static_cast<size_t>(n)] * fb[j * N + n];
      m[static_cast<size_t>(i * L + j)] = e;
      for (int64_t n = 0; n < N; ++n) prod[static_cast<size_t>(n)] *= fA[i * N + n];
    }
  }
  for (int64_t i = 0; i < L; ++i) {  // upper: m_ij = bc_j^T (prod strictly between) bb_i
    std::fill(prod.begin(), prod.end(), S(1));
    for (int64_t j = i + 1; j < L; ++j) {
      S e = S(0);
      for (int64_t n = 0; n < N; ++n) e += bc[j * N + n] * prod[static_cast<size_t>(n)] * bb[i * N + n];
      m[static_cast<size_t>(i * L + j)] = e;
      for (int64_t n = 0; n < N; ++n) prod[static_cast<size_t>(n)] *= bA[j * N + n];
    }
  }
  return m;
}

template <typename S>
HydraParams<S> make_hydra_params(ParamStore<S>& store, const std::string& prefix, int64_t d,
                                 int64_t n, SplitMix64& rng) {
  HydraParams<S> p;
  p.a_f = store.add_full(prefix + ".a_f", {d}, S(1));
  p.a_b = store.add_full(prefix + ".a_b", {d}, S(1));
  p.W_dt = store.add_uniform(prefix + ".w_dt", {d, d}, d, rng);
  p.b_dt = store.add_zeros(prefix + ".b_dt", {d});
  p.W_fb = store.add_uniform(prefix + ".w_fb", {n, d}, d, rng);
  p.W_fc = store.add_uniform(prefix + ".w_fc", {n, d}, d, rng);
  p.W_bb = store.add_uniform(prefix + ".w_bb", {n, d}, d, rng);
  p.W_bc = store.add_uniform(prefix + ".w_bc", {n, d}, d, rng);
  p.delta = store.add_full(prefix + ".delta", {d}, S(1));
  return p;
}

template <typename S>
Tensor<S> hydra_mix(const Tensor<S>& x, const HydraParams<S>& p) {
  check_seq(x);
  const int64_t L = x.shape()[0];
  const int64_t N = p.W_fb.shape()[0];
  auto dt = softplus(linear(x, p.W_dt, p.b_dt));
  auto abf = exp(neg(mul(expand_axis0(softplus(p.a_f), L), dt)));
  auto abb = exp(neg(mul(expand_axis0(softplus(p.a_b), L), dt)));
  auto fb = linear(x, p.W_fb, Tensor<S>());
  auto fc = linear(x, p.W_fc, Tensor<S>());
  auto bb = linear(x, p.W_bb, Tensor<S>());
  auto bc = linear(x, p.W_bc, Tensor<S>());
  return quasi_compose(x, lift_channel(abf, N), fb, fc, lift_channel(abb, N), bb, bc,
                       expand_axis0(p.delta, L));
}

template <typename S>
Tensor<S> gated_cnn_mix(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (x.dim() != 4) throw ShapeError("gated_cnn_mix: x must be (C,D,H,W), got " + str(x.shape()));
  const int64_t c = x.shape()[0];
  if (weight.dim() != 5 || weight.shape()[0] != c || weight.shape()[1] != 1) {
    throw ShapeError("gated_cnn_mix: weight " + str(weight.shape()) + " does not match channels of " +
                     str(x.shape()));
  }
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = static_cast<int>(weight.shape()[2] / 2);
  o.groups = static_cast<int>(c);
  return conv3d(x, weight, bias, o);
}

OracleSweepResult run_seqmix_oracles(uint64_t seed, int cases) {
  OracleSweepResult res;
  SplitMix64 root(seed);
  NoGradGuard guard;
  using T = Tensor<double>;
  auto rand_t = [](const Shape& s, SplitMix64& r, double lo, double hi) {
    std::vector<double> v(static_cast<size_t>(numel(s)));
    for (auto& e : v) e = r.uniform(lo, hi);
    return T::from(s, std::move(v));
  };
  for (int k = 0; k < cases; ++k) {
    SplitMix64 rng = root.fork(static_cast<uint64_t>(k));
    const int64_t L = 1 + static_cast<int64_t>(rng.below(32));
    const int64_t N = 1 + static_cast<int64_t>(rng.below(4));
    const int64_t d = 1 + static_cast<int64_t>(rng.below(3));
    auto x = rand_t({L, d}, rng, -1.0, 1.0);

    RealizedSsm<double> p;
    p.abar = rand_t({L, d}, rng, 0.05, 1.0);
    p.dt = rand_t({L, d}, rng, 0.1, 1.0);
    p.B = rand_t({L, N}, rng, -1.0, 1.0);
    p.C = rand_t({L, N}, rng, -1.0, 1.0);
    p.D = rand_t({d}, rng, -1.0, 1.0);
    auto y = ssm_scan(x, p);
    auto m = materialize_semiseparable(p);
    for (int64_t c = 0; c < d; ++c) {
      for (int64_t i = 0; i < L; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < L; ++j) acc += m[static_cast<size_t>((c * L + i) * L + j)] * x.values()[j * d + c];
        res.max_scan_err = std::max(res.max_scan_err, std::abs(acc - y.values()[i * d + c]));
      }
    }

    QuasiParams<double> q;
    q.fA = rand_t({L, N}, rng, -1.0, 1.0);
    q.fb = rand_t({L, N}, rng, -1.0, 1.0);
    q.fc = rand_t({L, N}, rng, -1.0, 1.0);
    q.bA = rand_t({L, N}, rng, -1.0, 1.0);
    q.bb = rand_t({L, N}, rng, -1.0, 1.0);
    q.bc = rand_t({L, N}, rng, -1.0, 1.0);
    q.delta = rand_t({L}, rng, -1.0, 1.0);
    auto qy = quasiseparable_matmul(x, q);
    auto qm = quasiseparable_materialize(q);
    for (int64_t c = 0; c < d; ++c) {
      for (int64_t i = 0; i < L; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < L; ++j) acc += qm[static_cast<size_t>(i * L + j)] * x.values()[j * d + c];
        res.max_quasi_err = std::max(res.max_quasi_err, std::abs(acc - qy.values()[i * d + c]));
      }
    }

    auto x2 = rand_t({L, d}, rng, -1.0, 1.0);
    const double al = 0.7, be = -1.3;
    auto mix = quasiseparable_matmul(
        add(mul_scalar(x, al), mul_scalar(x2, be)), q);
    auto sep = add(mul_scalar(quasiseparable_matmul(x, q), al),
                   mul_scalar(quasiseparable_matmul(x2, q), be));
    for (int64_t i = 0; i < mix.numel(); ++i) {
      res.max_linearity_err =
          std::max(res.max_linearity_err, std::abs(mix.values()[i] - sep.values()[i]));
    }
    ++res.cases;
  }
  return res;
}

#define VOLUMIX_INST(S)                                                                      \
  template Tensor<S> ssm_scan(const Tensor<S>&, const RealizedSsm<S>&);                      \
  template std::vector<S> materialize_semiseparable(const RealizedSsm<S>&);                  \
  template SsmParams<S> make_ssm_params(ParamStore<S>&, const std::string&, int64_t, int64_t, \
                                        SplitMix64&);                                        \
  template RealizedSsm<S> realize_ssm(const SsmParams<S>&, const Tensor<S>&);                \
  template Tensor<S> ssm_mix(const Tensor<S>&, const SsmParams<S>&);                         \
  template Tensor<S> hydra_branch_scan(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                       const Tensor<S>&);                                    \
  template Tensor<S> quasiseparable_matmul(const Tensor<S>&, const QuasiParams<S>&);         \
  template std::vector<S> quasiseparable_materialize(const QuasiParams<S>&);                 \
  template HydraParams<S> make_hydra_params(ParamStore<S>&, const std::string&, int64_t,     \
                                            int64_t, SplitMix64&);                           \
  template Tensor<S> hydra_mix(const Tensor<S>&, const HydraParams<S>&);                     \
  template Tensor<S> gated_cnn_mix(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
