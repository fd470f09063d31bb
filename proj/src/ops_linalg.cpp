#include <Eigen/Dense>

#include "volumix/ops.hpp"

namespace volumix {

namespace {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim() < 2 || b.dim() < 2 || a.dim() != b.dim()) {
    throw ShapeError("matmul: ranks " + str(a.shape()) + " vs " + str(b.shape()));
  }
  int r = static_cast<int>(a.dim());
  for (int i = 0; i < r - 2; ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw ShapeError("matmul: leading dims differ " + str(a.shape()) + " vs " + str(b.shape()));
    }
  }
  int64_t m = a.shape()[r - 2], k = a.shape()[r - 1];
  int64_t k2 = b.shape()[r - 2], n = b.shape()[r - 1];
  if (k != k2) {
    throw ShapeError("matmul: inner dims differ " + str(a.shape()) + " vs " + str(b.shape()));
  }
  int64_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<S> v(static_cast<size_t>(batch * m * n));
  for (int64_t t = 0; t < batch; ++t) {
    CMatMap<S> A(a.data() + t * m * k, m, k);
    CMatMap<S> B(b.data() + t * k * n, k, n);
    MatMap<S> C(v.data() + t * m * n, m, n);
    C.noalias() = A * B;
  }
  return make_node<S>("matmul", std::move(out_shape), std::move(v), {a, b},
                      [batch, m, k, n](Node<S>& n_) {
                        auto& pa = *n_.parents[0];
                        auto& pb = *n_.parents[1];
                        for (int64_t t = 0; t < batch; ++t) {
                          CMatMap<S> A(pa.value.data() + t * m * k, m, k);
                          CMatMap<S> B(pb.value.data() + t * k * n, k, n);
                          CMatMap<S> G(n_.grad.data() + t * m * n, m, n);
                          if (pa.requires_grad) {
                            MatMap<S> GA(pa.grad.data() + t * m * k, m, k);
                            GA.noalias() += G * B.transpose();
                          }
                          if (pb.requires_grad) {
                            MatMap<S> GB(pb.grad.data() + t * k * n, k, n);
                            GB.noalias() += A.transpose() * G;
                          }
                        }
                      });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.dim() < 1 || w.dim() != 2) {
    throw ShapeError("linear: ranks " + str(x.shape()) + " vs " + str(w.shape()));
  }
  int64_t kin = x.shape().back();
  int64_t mout = w.shape()[0];
  if (w.shape()[1] != kin) {
    throw ShapeError("linear: input features " + str(x.shape()) + " vs weight " + str(w.shape()));
  }
  if (b.defined() && !(b.dim() == 1 && b.shape()[0] == mout)) {
    throw ShapeError("linear: bias " + str(b.shape()) + " vs weight " + str(w.shape()));
  }
  int64_t rows = x.numel() / kin;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(mout);
  std::vector<S> v(static_cast<size_t>(rows * mout));
  {
    CMatMap<S> X(x.data(), rows, kin);
    CMatMap<S> W(w.data(), mout, kin);
    MatMap<S> Y(v.data(), rows, mout);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < mout; ++j) v[static_cast<size_t>(r * mout + j)] += b.data()[j];
      }
    }
  }
  std::vector<Tensor<S>> parents = b.defined() ? std::vector<Tensor<S>>{x, w, b}
                                               : std::vector<Tensor<S>>{x, w};
  return make_node<S>("linear", std::move(out_shape), std::move(v), parents,
                      [rows, kin, mout](Node<S>& n_) {
                        auto& px = *n_.parents[0];
                        auto& pw = *n_.parents[1];
                        CMatMap<S> X(px.value.data(), rows, kin);
                        CMatMap<S> W(pw.value.data(), mout, kin);
                        CMatMap<S> G(n_.grad.data(), rows, mout);
                        if (px.requires_grad) {
                          MatMap<S> GX(px.grad.data(), rows, kin);
                          GX.noalias() += G * W;
                        }
                        if (pw.requires_grad) {
                          MatMap<S> GW(pw.grad.data(), mout, kin);
                          GW.noalias() += G.transpose() * X;
                        }
                        if (n_.parents.size() > 2 && n_.parents[2]->requires_grad) {
                          auto& gb = n_.parents[2]->grad;
                          for (int64_t r = 0; r < rows; ++r) {
                            for (int64_t j = 0; j < mout; ++j) {
                              gb[static_cast<size_t>(j)] += n_.grad[static_cast<size_t>(r * mout + j)];
                            }
                          }
                        }
                      });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  if (x.dim() < 2) throw ShapeError("layer_norm: input must have a channel axis, got " + str(x.shape()));
  int64_t c = x.shape()[0];
  if (!(gamma.dim() == 1 && gamma.shape()[0] == c && beta.dim() == 1 && beta.shape()[0] == c)) {
    throw ShapeError("layer_norm: affine params " + str(gamma.shape()) + "/" + str(beta.shape()) +
                     " vs channels of " + str(x.shape()));
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  Tensor<S> mu = mean_axis0(x);
  Tensor<S> xc = sub(x, expand_axis0(mu, c));
  Tensor<S> var = mean_axis0(mul(xc, xc));
  Tensor<S> inv = reciprocal(sqrt(add_scalar(var, eps)));
  Tensor<S> xhat = mul(xc, expand_axis0(inv, c));
  return add(mul(xhat, expand_rest(gamma, rest)), expand_rest(beta, rest));
}

template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  if (x.dim() < 2) throw ShapeError("instance_norm: input must have a channel axis, got " + str(x.shape()));
  int64_t c = x.shape()[0];
  if (!(gamma.dim() == 1 && gamma.shape()[0] == c && beta.dim() == 1 && beta.shape()[0] == c)) {
    throw ShapeError("instance_norm: affine params " + str(gamma.shape()) + "/" +
                     str(beta.shape()) + " vs channels of " + str(x.shape()));
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  Tensor<S> mu = mean_rest(x);
  Tensor<S> xc = sub(x, expand_rest(mu, rest));
  Tensor<S> var = mean_rest(mul(xc, xc));
  Tensor<S> inv = reciprocal(sqrt(add_scalar(var, eps)));
  Tensor<S> xhat = mul(xc, expand_rest(inv, rest));
  return add(mul(xhat, expand_rest(gamma, rest)), expand_rest(beta, rest));
}

template <typename S>
Tensor<S> softmax_axis0(const Tensor<S>& x) {
  if (x.dim() < 1) throw ShapeError("softmax_axis0: rank-0 input");
  int r = static_cast<int>(x.dim());
  std::vector<int> to_last(static_cast<size_t>(r));
  std::vector<int> back(static_cast<size_t>(r));
  for (int i = 0; i < r - 1; ++i) to_last[static_cast<size_t>(i)] = i + 1;
  to_last[static_cast<size_t>(r - 1)] = 0;
  back[0] = r - 1;
  for (int i = 1; i < r; ++i) back[static_cast<size_t>(i)] = i - 1;
  return permute(softmax(permute(x, to_last)), back);
}

#define VOLUMIX_INST(S)                                                                   \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);        \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S); \
  template Tensor<S> instance_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,  \
                                   S);                                                    \
  template Tensor<S> softmax_axis0(const Tensor<S>&);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
