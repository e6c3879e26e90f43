#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "fss/core/autodiff.hpp"

namespace fss {

// NCHW convolution stack. GEMM-backed via im2col so the heavy lifting stays
// inside Eigen.

namespace detail {

template <typename Scalar>
using ColMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline Index conv_out_dim(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Gathers receptive fields of one sample into a (C*kh*kw) x (Ho*Wo) matrix.
template <typename Scalar>
void im2col(const Scalar* x, Index C, Index H, Index W, Index kh, Index kw, Index stride,
            Index pad, ColMat<Scalar>& cols) {
  const Index Ho = conv_out_dim(H, kh, stride, pad);
  const Index Wo = conv_out_dim(W, kw, stride, pad);
  cols.resize(C * kh * kw, Ho * Wo);
  for (Index c = 0; c < C; ++c) {
    const Scalar* xc = x + c * H * W;
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) {
            for (Index ow = 0; ow < Wo; ++ow)
              cols(row, oh * Wo + ow) = Scalar(0);
            continue;
          }
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            cols(row, oh * Wo + ow) =
                (iw < 0 || iw >= W) ? Scalar(0) : xc[ih * W + iw];
          }
        }
      }
    }
  }
}

// Scatters columns back, accumulating into the sample gradient.
template <typename Scalar>
void col2im_add(const ColMat<Scalar>& cols, Index C, Index H, Index W, Index kh, Index kw,
                Index stride, Index pad, Scalar* gx) {
  const Index Ho = conv_out_dim(H, kh, stride, pad);
  const Index Wo = conv_out_dim(W, kw, stride, pad);
  for (Index c = 0; c < C; ++c) {
    Scalar* gc = gx + c * H * W;
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) continue;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            if (iw < 0 || iw >= W) continue;
            gc[ih * W + iw] += cols(row, oh * Wo + ow);
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] (may be null for no bias).
template <typename Scalar>
VarT<Scalar> conv2d(const VarT<Scalar>& x, const VarT<Scalar>& w, const VarT<Scalar>& b,
                    Index stride, Index pad) {
  if (x->value.rank() != 4 || w->value.rank() != 4 || x->value.dim(1) != w->value.dim(1))
    throw InvalidInputError("conv2d: bad shapes");
  const Index N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  const Index Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  const Index Ho = detail::conv_out_dim(H, kh, stride, pad);
  const Index Wo = detail::conv_out_dim(W, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw InvalidInputError("conv2d: non-positive output dims");

  Tensor<Scalar> out(Shape{N, Cout, Ho, Wo});
  auto wmat = w->value.as_mat(Cout, Cin * kh * kw);
  detail::ColMat<Scalar> cols;
  for (Index n = 0; n < N; ++n) {
    detail::im2col(x->value.data() + n * Cin * H * W, Cin, H, W, kh, kw, stride, pad, cols);
    auto ymap = out.as_mat(N * Cout, Ho * Wo).middleRows(n * Cout, Cout);
    ymap.noalias() = wmat * cols;
    if (b) {
      for (Index c = 0; c < Cout; ++c) ymap.row(c).array() += b->value[c];
    }
  }

  std::vector<VarT<Scalar>> parents{x, w};
  if (b) parents.push_back(b);
  return make_op<Scalar>(
      std::move(out), std::move(parents),
      [x, w, b, N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad](NodeT<Scalar>& node) {
        auto wmat = w->value.as_mat(Cout, Cin * kh * kw);
        if (w->requires_grad && !w->has_grad()) w->grad = Tensor<Scalar>(w->value.shape());
        if (x->requires_grad && !x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
        if (b && b->requires_grad && !b->has_grad()) b->grad = Tensor<Scalar>(b->value.shape());
        detail::ColMat<Scalar> cols, gcols;
        for (Index n = 0; n < N; ++n) {
          auto gy = node.grad.as_mat(N * Cout, Ho * Wo).middleRows(n * Cout, Cout);
          if (w->requires_grad || b) {
            if (w->requires_grad) {
              detail::im2col(x->value.data() + n * Cin * H * W, Cin, H, W, kh, kw, stride,
                             pad, cols);
              w->grad.as_mat(Cout, Cin * kh * kw).noalias() += gy * cols.transpose();
            }
            if (b && b->requires_grad) {
              for (Index c = 0; c < Cout; ++c) b->grad[c] += gy.row(c).sum();
            }
          }
          if (x->requires_grad) {
            gcols.noalias() = wmat.transpose() * gy;
            detail::col2im_add(gcols, Cin, H, W, kh, kw, stride, pad,
                               x->grad.data() + n * Cin * H * W);
          }
        }
      });
}

// Transposed convolution; w: [Cin,Cout,kh,kw]. Output spatial size is
// (in-1)*stride + k. With k=stride=2 this exactly doubles H and W.
template <typename Scalar>
VarT<Scalar> conv_transpose2d(const VarT<Scalar>& x, const VarT<Scalar>& w,
                              const VarT<Scalar>& b, Index stride) {
  if (x->value.rank() != 4 || w->value.rank() != 4 || x->value.dim(1) != w->value.dim(0))
    throw InvalidInputError("conv_transpose2d: bad shapes");
  const Index N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  const Index Cout = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  const Index Ho = (H - 1) * stride + kh;
  const Index Wo = (W - 1) * stride + kw;

  Tensor<Scalar> out(Shape{N, Cout, Ho, Wo});
  auto wmat = w->value.as_mat(Cin, Cout * kh * kw);
  detail::ColMat<Scalar> cols;
  for (Index n = 0; n < N; ++n) {
    auto xmap = x->value.as_mat(N * Cin, H * W).middleRows(n * Cin, Cin);
    cols.noalias() = wmat.transpose() * xmap;  // (Cout*kh*kw) x (H*W)
    detail::col2im_add(cols, Cout, Ho, Wo, kh, kw, stride, Index(0),
                       out.data() + n * Cout * Ho * Wo);
    if (b) {
      auto ymap = out.as_mat(N * Cout, Ho * Wo).middleRows(n * Cout, Cout);
      for (Index c = 0; c < Cout; ++c) ymap.row(c).array() += b->value[c];
    }
  }

  std::vector<VarT<Scalar>> parents{x, w};
  if (b) parents.push_back(b);
  return make_op<Scalar>(
      std::move(out), std::move(parents),
      [x, w, b, N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride](NodeT<Scalar>& node) {
        auto wmat = w->value.as_mat(Cin, Cout * kh * kw);
        if (w->requires_grad && !w->has_grad()) w->grad = Tensor<Scalar>(w->value.shape());
        if (x->requires_grad && !x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
        if (b && b->requires_grad && !b->has_grad()) b->grad = Tensor<Scalar>(b->value.shape());
        detail::ColMat<Scalar> gycols;
        for (Index n = 0; n < N; ++n) {
          detail::im2col(node.grad.data() + n * Cout * Ho * Wo, Cout, Ho, Wo, kh, kw, stride,
                         Index(0), gycols);
          if (x->requires_grad) {
            auto gx = x->grad.as_mat(N * Cin, H * W).middleRows(n * Cin, Cin);
            gx.noalias() += wmat * gycols;
          }
          if (w->requires_grad) {
            auto xmap = x->value.as_mat(N * Cin, H * W).middleRows(n * Cin, Cin);
            w->grad.as_mat(Cin, Cout * kh * kw).noalias() += xmap * gycols.transpose();
          }
          if (b && b->requires_grad) {
            auto gy = node.grad.as_mat(N * Cout, Ho * Wo).middleRows(n * Cout, Cout);
            for (Index c = 0; c < Cout; ++c) b->grad[c] += gy.row(c).sum();
          }
        }
      });
}

template <typename Scalar>
VarT<Scalar> maxpool2d(const VarT<Scalar>& x, Index k, Index stride, Index pad) {
  const Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  const Index Ho = detail::conv_out_dim(H, k, stride, pad);
  const Index Wo = detail::conv_out_dim(W, k, stride, pad);
  Tensor<Scalar> out(Shape{N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<Index>>(
      static_cast<size_t>(N * C * Ho * Wo));
  const Scalar lowest = std::numeric_limits<Scalar>::lowest();
  Index o = 0;
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Scalar* xc = x->value.data() + (n * C + c) * H * W;
      for (Index oh = 0; oh < Ho; ++oh) {
        for (Index ow = 0; ow < Wo; ++ow, ++o) {
          Scalar best = lowest;
          Index best_idx = -1;
          for (Index ki = 0; ki < k; ++ki) {
            const Index ih = oh * stride + ki - pad;
            if (ih < 0 || ih >= H) continue;
            for (Index kj = 0; kj < k; ++kj) {
              const Index iw = ow * stride + kj - pad;
              if (iw < 0 || iw >= W) continue;
              const Scalar v = xc[ih * W + iw];
              if (v > best) {
                best = v;
                best_idx = (n * C + c) * H * W + ih * W + iw;
              }
            }
          }
          out[o] = best;
          (*argmax)[static_cast<size_t>(o)] = best_idx;
        }
      }
    }
  }
  return make_op<Scalar>(std::move(out), {x}, [x, argmax](NodeT<Scalar>& node) {
    if (!x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
    for (Index i = 0; i < node.grad.size(); ++i) {
      const Index src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) x->grad[src] += node.grad[i];
    }
  });
}

// Concatenation along the channel axis of NCHW tensors.
template <typename Scalar>
VarT<Scalar> concat_channels(const std::vector<VarT<Scalar>>& xs) {
  if (xs.empty()) throw InvalidInputError("concat_channels: empty input");
  const Index N = xs[0]->value.dim(0), H = xs[0]->value.dim(2), W = xs[0]->value.dim(3);
  Index Ctot = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 4 || x->value.dim(0) != N || x->value.dim(2) != H ||
        x->value.dim(3) != W)
      throw InvalidInputError("concat_channels: spatial dims disagree");
    Ctot += x->value.dim(1);
  }
  Tensor<Scalar> out(Shape{N, Ctot, H, W});
  for (Index n = 0; n < N; ++n) {
    Index coff = 0;
    for (const auto& x : xs) {
      const Index C = x->value.dim(1);
      std::copy_n(x->value.data() + n * C * H * W, C * H * W,
                  out.data() + (n * Ctot + coff) * H * W);
      coff += C;
    }
  }
  return make_op<Scalar>(std::move(out), xs, [xs, N, H, W, Ctot](NodeT<Scalar>& node) {
    for (Index n = 0; n < N; ++n) {
      Index coff = 0;
      for (const auto& x : xs) {
        const Index C = x->value.dim(1);
        if (x->requires_grad) {
          if (!x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
          Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
              x->grad.data() + n * C * H * W, C * H * W) +=
              Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
                  node.grad.data() + (n * Ctot + coff) * H * W, C * H * W);
        }
        coff += C;
      }
    }
  });
}

// Batch normalization over N,H,W per channel. In training mode batch
// statistics normalize the activations and update the running buffers; in
// eval mode the running buffers are used and never touched.
template <typename Scalar>
VarT<Scalar> batch_norm2d(const VarT<Scalar>& x, const VarT<Scalar>& gamma,
                          const VarT<Scalar>& beta, Tensor<Scalar>* running_mean,
                          Tensor<Scalar>* running_var, bool training, Scalar momentum,
                          Scalar eps) {
  const Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  const Index M = N * H * W;
  Tensor<Scalar> out(x->value.shape());

  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec mean_v(C), invstd_v(C);
  if (training) {
    for (Index c = 0; c < C; ++c) {
      Scalar s = 0, s2 = 0;
      for (Index n = 0; n < N; ++n) {
        auto xm = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
            x->value.data() + (n * C + c) * H * W, H * W);
        s += xm.sum();
        s2 += xm.square().sum();
      }
      const Scalar mu = s / static_cast<Scalar>(M);
      const Scalar var = s2 / static_cast<Scalar>(M) - mu * mu;  // biased
      mean_v(c) = mu;
      invstd_v(c) = Scalar(1) / std::sqrt(std::max(var, Scalar(0)) + eps);
      if (running_mean && running_var) {
        const Scalar unbiased =
            M > 1 ? var * static_cast<Scalar>(M) / static_cast<Scalar>(M - 1) : var;
        (*running_mean)[c] = (Scalar(1) - momentum) * (*running_mean)[c] + momentum * mu;
        (*running_var)[c] = (Scalar(1) - momentum) * (*running_var)[c] + momentum * unbiased;
      }
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean_v(c) = (*running_mean)[c];
      invstd_v(c) = Scalar(1) / std::sqrt((*running_var)[c] + eps);
    }
  }

  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      auto xm = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
          x->value.data() + (n * C + c) * H * W, H * W);
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
          out.data() + (n * C + c) * H * W, H * W) =
          (xm - mean_v(c)) * invstd_v(c) * gamma->value[c] + beta->value[c];
    }
  }

  return make_op<Scalar>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean_v, invstd_v, N, C, H, W, M, training](NodeT<Scalar>& node) {
        using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
        if (x->requires_grad && !x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
        if (gamma->requires_grad && !gamma->has_grad())
          gamma->grad = Tensor<Scalar>(gamma->value.shape());
        if (beta->requires_grad && !beta->has_grad())
          beta->grad = Tensor<Scalar>(beta->value.shape());
        for (Index c = 0; c < C; ++c) {
          Scalar sum_dy = 0, sum_dy_xhat = 0;
          for (Index n = 0; n < N; ++n) {
            auto dy = Eigen::Map<const Arr>(node.grad.data() + (n * C + c) * H * W, H * W);
            auto xv = Eigen::Map<const Arr>(x->value.data() + (n * C + c) * H * W, H * W);
            sum_dy += dy.sum();
            sum_dy_xhat += (dy * (xv - mean_v(c)) * invstd_v(c)).sum();
          }
          if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
          if (beta->requires_grad) beta->grad[c] += sum_dy;
          if (x->requires_grad) {
            const Scalar g = gamma->value[c] * invstd_v(c);
            const Scalar mdy = sum_dy / static_cast<Scalar>(M);
            const Scalar mdyx = sum_dy_xhat / static_cast<Scalar>(M);
            for (Index n = 0; n < N; ++n) {
              auto dy = Eigen::Map<const Arr>(node.grad.data() + (n * C + c) * H * W, H * W);
              auto xv = Eigen::Map<const Arr>(x->value.data() + (n * C + c) * H * W, H * W);
              auto gx = Eigen::Map<Arr>(x->grad.data() + (n * C + c) * H * W, H * W);
              if (training) {
                const auto xhat = (xv - mean_v(c)) * invstd_v(c);
                gx += g * (dy - mdy - xhat * mdyx);
              } else {
                gx += g * dy;
              }
            }
          }
        }
      });
}

// Mean over the spatial dims: [N,C,H,W] -> [N,C].
template <typename Scalar>
VarT<Scalar> spatial_mean(const VarT<Scalar>& x) {
  const Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(H * W);
  Tensor<Scalar> out(Shape{N, C});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      out.at(n, c) = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
                         x->value.data() + (n * C + c) * H * W, H * W)
                         .sum() *
                     inv;
  return make_op<Scalar>(std::move(out), {x}, [x, N, C, H, W, inv](NodeT<Scalar>& node) {
    if (!x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c)
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
            x->grad.data() + (n * C + c) * H * W, H * W) += node.grad.at(n, c) * inv;
  });
}

// [N,C,H,W] -> [N*H*W, C]; one row per pixel (for per-pixel softmax losses).
template <typename Scalar>
VarT<Scalar> channels_to_rows(const VarT<Scalar>& x) {
  const Index N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
              W = x->value.dim(3);
  Tensor<Scalar> out(Shape{N * H * W, C});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w)
          out.at((n * H + h) * W + w, c) = x->value.at(n, c, h, w);
  return make_op<Scalar>(std::move(out), {x}, [x, N, C, H, W](NodeT<Scalar>& node) {
    if (!x->has_grad()) x->grad = Tensor<Scalar>(x->value.shape());
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c)
        for (Index h = 0; h < H; ++h)
          for (Index w = 0; w < W; ++w)
            x->grad.at(n, c, h, w) += node.grad.at((n * H + h) * W + w, c);
  });
}

// ---- plain tensor helpers (no autodiff; evaluation-path plumbing) ----

// Reflect-pads H and W up to the next multiple of `multiple`.
template <typename Scalar>
Tensor<Scalar> reflect_pad_to_multiple(const Tensor<Scalar>& x, Index multiple) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Hp = ((H + multiple - 1) / multiple) * multiple;
  const Index Wp = ((W + multiple - 1) / multiple) * multiple;
  if (Hp == H && Wp == W) return x;
  if (H < 2 || W < 2) throw InvalidInputError("reflect pad needs dims >= 2");
  Tensor<Scalar> out(Shape{N, C, Hp, Wp});
  auto reflect = [](Index i, Index n) {
    // reflect without repeating the edge sample
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < Hp; ++h)
        for (Index w = 0; w < Wp; ++w)
          out.at(n, c, h, w) = x.at(n, c, reflect(h, H), reflect(w, W));
  return out;
}

template <typename Scalar>
Tensor<Scalar> crop_hw(const Tensor<Scalar>& x, Index H, Index W) {
  const Index N = x.dim(0), C = x.dim(1);
  if (H > x.dim(2) || W > x.dim(3)) throw InvalidInputError("crop larger than input");
  Tensor<Scalar> out(Shape{N, C, H, W});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w) out.at(n, c, h, w) = x.at(n, c, h, w);
  return out;
}

}  // namespace fss
