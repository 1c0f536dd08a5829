#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fusionbench/tensor.hpp"

namespace fusion {

namespace detail {

// C[M x N] += A[M x K] * B[K x N], row-major. Inner loop over N keeps the
// accumulation order fixed and lets the compiler vectorize without
// reassociating sums.
template <class T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * K;
        T* c = C + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M x N] += A[M x L] * B[N x L]^T (dot products along L).
template <class T>
void gemm_abt_acc(const T* A, const T* B, T* C, int M, int L, int N) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * L;
        for (int j = 0; j < N; ++j) {
            const T* b = B + static_cast<std::size_t>(j) * L;
            T s = 0;
            for (int l = 0; l < L; ++l) s += a[l] * b[l];
            C[static_cast<std::size_t>(i) * N + j] += s;
        }
    }
}

// Unfold one image [C x H x W] into columns [C*Kh*Kw x OH*OW], zero padding.
template <class T>
void im2col(const T* x, int C, int H, int W, int Kh, int Kw, int stride, int pad,
            int OH, int OW, T* col) {
    for (int c = 0; c < C; ++c) {
        for (int kh = 0; kh < Kh; ++kh) {
            for (int kw = 0; kw < Kw; ++kw) {
                const int row = (c * Kh + kh) * Kw + kw;
                T* dst = col + static_cast<std::size_t>(row) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        const bool in = ih >= 0 && ih < H && iw >= 0 && iw < W;
                        dst[oh * OW + ow] =
                            in ? x[(static_cast<std::size_t>(c) * H + ih) * W + iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of column gradients back onto the image.
template <class T>
void col2im_acc(const T* col, int C, int H, int W, int Kh, int Kw, int stride, int pad,
                int OH, int OW, T* x) {
    for (int c = 0; c < C; ++c) {
        for (int kh = 0; kh < Kh; ++kh) {
            for (int kw = 0; kw < Kw; ++kw) {
                const int row = (c * Kh + kh) * Kw + kw;
                const T* src = col + static_cast<std::size_t>(row) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw < 0 || iw >= W) continue;
                        x[(static_cast<std::size_t>(c) * H + ih) * W + iw] += src[oh * OW + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and reductions

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    auto out = BasicTensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::check_finite(out, "add");
    detail::record<T>(out, {a, b}, [an = a.node(), bn = b.node()](detail::Node<T>& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (an->needs_grad()) detail::accumulate(*an, i, o.grad[i]);
            if (bn->needs_grad()) detail::accumulate(*bn, i, o.grad[i]);
        }
    });
    return out;
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T c) {
    auto out = BasicTensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = c * x.data()[i];
    detail::check_finite(out, "scale");
    detail::record<T>(out, {x}, [xn = x.node(), c](detail::Node<T>& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) detail::accumulate(*xn, i, c * o.grad[i]);
    });
    return out;
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    auto out = BasicTensor<T>::scalar(s);
    detail::record<T>(out, {x}, [xn = x.node()](detail::Node<T>& o) {
        const T g = o.grad[0];
        for (std::size_t i = 0; i < xn->data.size(); ++i) detail::accumulate(*xn, i, g);
    });
    return out;
}

// Sum of squares over a row block of a 2-D matrix; the L2 penalty primitive.
template <class T>
BasicTensor<T> sum_squares_rows(const BasicTensor<T>& m, int row_begin, int row_end) {
    if (m.rank() != 2)
        throw DimensionError("sum_squares_rows expects a matrix, got " + shape_str(m.shape()));
    const int R = m.size(0), C = m.size(1);
    if (row_begin < 0 || row_end < row_begin || row_end > R)
        throw ConfigError("row block [" + std::to_string(row_begin) + "," +
                          std::to_string(row_end) + ") outside matrix with " + std::to_string(R) +
                          " rows");
    T s = 0;
    for (int r = row_begin; r < row_end; ++r)
        for (int c = 0; c < C; ++c) {
            const T v = m.data()[static_cast<std::size_t>(r) * C + c];
            s += v * v;
        }
    auto out = BasicTensor<T>::scalar(s);
    detail::record<T>(out, {m}, [mn = m.node(), row_begin, row_end, C](detail::Node<T>& o) {
        const T g = o.grad[0];
        for (int r = row_begin; r < row_end; ++r)
            for (int c = 0; c < C; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * C + c;
                detail::accumulate(*mn, i, T(2) * mn->data[i] * g);
            }
    });
    return out;
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, std::vector<int> shape) {
    if (BasicTensor<T>::count(shape) != x.numel())
        throw DimensionError("reshape to " + shape_str(shape) + " from " + shape_str(x.shape()));
    auto out = BasicTensor<T>::from_data(std::move(shape),
                                         std::vector<T>(x.data().begin(), x.data().end()));
    detail::record<T>(out, {x}, [xn = x.node()](detail::Node<T>& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) detail::accumulate(*xn, i, o.grad[i]);
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear / conv / pooling / batchnorm

// out[n,m] = sum_d x[n,d] * W[d,m] + b[m]
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& W, const BasicTensor<T>& b) {
    if (x.rank() != 2 || W.rank() != 2 || x.size(1) != W.size(0))
        throw DimensionError("linear: x " + shape_str(x.shape()) + " incompatible with W " +
                             shape_str(W.shape()));
    const int N = x.size(0), D = x.size(1), M = W.size(1);
    if (b.rank() != 1 || b.size(0) != M)
        throw DimensionError("linear: bias " + shape_str(b.shape()) + " incompatible with W " +
                             shape_str(W.shape()));
    auto out = BasicTensor<T>::zeros({N, M});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) out.data()[static_cast<std::size_t>(n) * M + m] = b.data()[m];
    detail::gemm_acc(x.data().data(), W.data().data(), out.data().data(), N, D, M);
    detail::check_finite(out, "linear");
    detail::record<T>(out, {x, W, b},
                      [xn = x.node(), Wn = W.node(), bn = b.node(), N, D, M](detail::Node<T>& o) {
                          if (xn->needs_grad()) {
                              // dx[n,d] = sum_m dout[n,m] * W[d,m]; go through W^T
                              std::vector<T> WT(static_cast<std::size_t>(M) * D);
                              for (int d = 0; d < D; ++d)
                                  for (int m = 0; m < M; ++m)
                                      WT[static_cast<std::size_t>(m) * D + d] =
                                          Wn->data[static_cast<std::size_t>(d) * M + m];
                              xn->ensure_grad();
                              detail::gemm_acc(o.grad.data(), WT.data(), xn->grad.data(), N, M, D);
                          }
                          if (Wn->needs_grad()) {
                              Wn->ensure_grad();
                              for (int n = 0; n < N; ++n)
                                  for (int d = 0; d < D; ++d) {
                                      const T xv = xn->data[static_cast<std::size_t>(n) * D + d];
                                      const T* og = o.grad.data() + static_cast<std::size_t>(n) * M;
                                      T* wg = Wn->grad.data() + static_cast<std::size_t>(d) * M;
                                      for (int m = 0; m < M; ++m) wg[m] += xv * og[m];
                                  }
                          }
                          if (bn->needs_grad()) {
                              bn->ensure_grad();
                              for (int n = 0; n < N; ++n)
                                  for (int m = 0; m < M; ++m)
                                      bn->grad[m] += o.grad[static_cast<std::size_t>(n) * M + m];
                          }
                      });
    return out;
}

// Cross-correlation over NCHW input with FCKhKw kernels.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, int stride, int padding) {
    if (x.rank() != 4 || k.rank() != 4)
        throw DimensionError("conv2d expects 4-D input and kernel, got " + shape_str(x.shape()) +
                             " and " + shape_str(k.shape()));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int F = k.size(0), Kh = k.size(2), Kw = k.size(3);
    if (k.size(1) != C)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                             ", kernel " + shape_str(k.shape()));
    if (Kh > H + 2 * padding || Kw > W + 2 * padding)
        throw DimensionError("conv2d kernel " + shape_str(k.shape()) +
                             " larger than padded input " + shape_str(x.shape()));
    const int OH = (H + 2 * padding - Kh) / stride + 1;
    const int OW = (W + 2 * padding - Kw) / stride + 1;
    const int K = C * Kh * Kw;

    auto out = BasicTensor<T>::zeros({N, F, OH, OW});
    std::vector<T> col(static_cast<std::size_t>(K) * OH * OW);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.data().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, Kh, Kw,
                       stride, padding, OH, OW, col.data());
        detail::gemm_acc(k.data().data(), col.data(),
                         out.data().data() + static_cast<std::size_t>(n) * F * OH * OW, F, K,
                         OH * OW);
    }
    detail::check_finite(out, "conv2d");
    detail::record<T>(
        out, {x, k},
        [xn = x.node(), kn = k.node(), N, C, H, W, F, Kh, Kw, stride, padding, OH,
         OW](detail::Node<T>& o) {
            const int K = C * Kh * Kw;
            std::vector<T> col(static_cast<std::size_t>(K) * OH * OW);
            std::vector<T> KT;  // kernel transposed to [K x F], built once if needed
            if (xn->needs_grad()) {
                KT.resize(static_cast<std::size_t>(K) * F);
                for (int f = 0; f < F; ++f)
                    for (int r = 0; r < K; ++r)
                        KT[static_cast<std::size_t>(r) * F + f] =
                            kn->data[static_cast<std::size_t>(f) * K + r];
            }
            if (xn->needs_grad()) xn->ensure_grad();
            if (kn->needs_grad()) kn->ensure_grad();
            std::vector<T> dcol(static_cast<std::size_t>(K) * OH * OW);
            for (int n = 0; n < N; ++n) {
                const T* og = o.grad.data() + static_cast<std::size_t>(n) * F * OH * OW;
                if (kn->needs_grad()) {
                    detail::im2col(xn->data.data() + static_cast<std::size_t>(n) * C * H * W, C, H,
                                   W, Kh, Kw, stride, padding, OH, OW, col.data());
                    detail::gemm_abt_acc(og, col.data(), kn->grad.data(), F, OH * OW, K);
                }
                if (xn->needs_grad()) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_acc(KT.data(), og, dcol.data(), K, F, OH * OW);
                    detail::col2im_acc(dcol.data(), C, H, W, Kh, Kw, stride, padding, OH, OW,
                                       xn->grad.data() + static_cast<std::size_t>(n) * C * H * W);
                }
            }
        });
    return out;
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    auto out = BasicTensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    detail::record<T>(out, {x}, [xn = x.node()](detail::Node<T>& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (xn->data[i] > T(0)) detail::accumulate(*xn, i, o.grad[i]);
    });
    return out;
}

// Non-overlapping k x k average pooling; the window must tile the input.
template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, int k) {
    if (x.rank() != 4)
        throw DimensionError("avg_pool2d expects 4-D input, got " + shape_str(x.shape()));
    if (k < 1) throw ConfigError("avg_pool2d window must be >= 1");
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (H % k != 0 || W % k != 0)
        throw DimensionError("avg_pool2d window " + std::to_string(k) +
                             " does not divide spatial extents of " + shape_str(x.shape()));
    const int OH = H / k, OW = W / k;
    auto out = BasicTensor<T>::zeros({N, C, OH, OW});
    const T inv = T(1) / static_cast<T>(k * k);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            T* op = out.data().data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T s = 0;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j) s += xp[(oh * k + i) * W + ow * k + j];
                    op[oh * OW + ow] = s * inv;
                }
        }
    detail::check_finite(out, "avg_pool2d");
    detail::record<T>(out, {x}, [xn = x.node(), N, C, H, W, OH, OW, k, inv](detail::Node<T>& o) {
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* xg = xn->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                const T* og = o.grad.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        const T g = og[oh * OW + ow] * inv;
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j) xg[(oh * k + i) * W + ow * k + j] += g;
                    }
            }
    });
    return out;
}

// Per-channel running statistics owned by the layer that wraps this op.
template <class T>
struct BnStats {
    std::vector<T> mean;
    std::vector<T> var;
};

// Batch normalization over NCHW. Train mode normalizes by batch statistics
// (variance guard eps) and updates the running estimates with `momentum`;
// eval mode normalizes by the running estimates.
template <class T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, BnStats<T>& stats, bool training,
                           T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.rank() != 4)
        throw DimensionError("batchnorm2d expects 4-D input, got " + shape_str(x.shape()));
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (gamma.numel() != static_cast<std::size_t>(C) || beta.numel() != static_cast<std::size_t>(C))
        throw DimensionError("batchnorm2d gamma/beta must have " + std::to_string(C) +
                             " channels");
    if (stats.mean.size() != static_cast<std::size_t>(C) ||
        stats.var.size() != static_cast<std::size_t>(C))
        throw DimensionError("batchnorm2d running stats must have " + std::to_string(C) +
                             " channels");
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t per_channel = static_cast<std::size_t>(N) * plane;
    if (training && per_channel < 2)
        throw ContractError("batchnorm2d train mode needs >= 2 values per channel");

    std::vector<T> mu(C), var(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n) {
                const T* xp = x.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += xp[i];
            }
            mu[c] = s / static_cast<T>(per_channel);
            T v = 0;
            for (int n = 0; n < N; ++n) {
                const T* xp = x.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = xp[i] - mu[c];
                    v += d * d;
                }
            }
            var[c] = v / static_cast<T>(per_channel);
            stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mu[c];
            stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * var[c];
        }
    } else {
        mu = stats.mean;
        var = stats.var;
    }

    std::vector<T> invstd(C);
    for (int c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var[c] + eps);

    auto out = BasicTensor<T>::zeros(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
            T* op = out.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
            const T g = gamma.data()[c], b = beta.data()[c], m = mu[c], is = invstd[c];
            for (std::size_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - m) * is + b;
        }
    detail::check_finite(out, "batchnorm2d");

    detail::record<T>(out, {x, gamma, beta},
                      [xn = x.node(), gn = gamma.node(), bn = beta.node(), mu, invstd, N, C, plane,
                       per_channel, training](detail::Node<T>& o) {
                          for (int c = 0; c < C; ++c) {
                              const T m = mu[c], is = invstd[c], g = gn->data[c];
                              // channel-wise reductions of dy and dy * xhat
                              T sum_dy = 0, sum_dy_xhat = 0;
                              for (int n = 0; n < N; ++n) {
                                  const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                                  for (std::size_t i = 0; i < plane; ++i) {
                                      const T dy = o.grad[off + i];
                                      sum_dy += dy;
                                      sum_dy_xhat += dy * (xn->data[off + i] - m) * is;
                                  }
                              }
                              if (bn->needs_grad()) detail::accumulate(*bn, c, sum_dy);
                              if (gn->needs_grad()) detail::accumulate(*gn, c, sum_dy_xhat);
                              if (!xn->needs_grad()) continue;
                              xn->ensure_grad();
                              const T inv_m = T(1) / static_cast<T>(per_channel);
                              for (int n = 0; n < N; ++n) {
                                  const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                                  for (std::size_t i = 0; i < plane; ++i) {
                                      const T dy = o.grad[off + i];
                                      T dx;
                                      if (training) {
                                          const T xhat = (xn->data[off + i] - m) * is;
                                          dx = g * is * (dy - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                                      } else {
                                          dx = g * is * dy;
                                      }
                                      xn->grad[off + i] += dx;
                                  }
                              }
                          }
                      });
    return out;
}

// Column-wise concatenation; `a` is the foreground block by contract.
template <class T>
BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(0) != b.size(0))
        throw DimensionError("concat: leading extents differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int N = a.size(0), Da = a.size(1), Db = b.size(1);
    auto out = BasicTensor<T>::zeros({N, Da + Db});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.data().data() + static_cast<std::size_t>(n) * Da, Da,
                    out.data().data() + static_cast<std::size_t>(n) * (Da + Db));
        std::copy_n(b.data().data() + static_cast<std::size_t>(n) * Db, Db,
                    out.data().data() + static_cast<std::size_t>(n) * (Da + Db) + Da);
    }
    detail::record<T>(out, {a, b}, [an = a.node(), bn = b.node(), N, Da, Db](detail::Node<T>& o) {
        for (int n = 0; n < N; ++n) {
            const T* og = o.grad.data() + static_cast<std::size_t>(n) * (Da + Db);
            if (an->needs_grad())
                for (int d = 0; d < Da; ++d)
                    detail::accumulate(*an, static_cast<std::size_t>(n) * Da + d, og[d]);
            if (bn->needs_grad())
                for (int d = 0; d < Db; ++d)
                    detail::accumulate(*bn, static_cast<std::size_t>(n) * Db + d, og[Da + d]);
        }
    });
    return out;
}

// Mean over rows of -log softmax(logits)[target], via max-subtracted
// log-sum-exp. Targets must be exact one-hot rows.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
    if (logits.rank() != 2 || targets.shape() != logits.shape())
        throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                             " vs targets " + shape_str(targets.shape()));
    const int N = logits.size(0), C = logits.size(1);
    std::vector<int> target_idx(N, -1);
    for (int n = 0; n < N; ++n) {
        int ones = 0;
        for (int c = 0; c < C; ++c) {
            const T v = targets.data()[static_cast<std::size_t>(n) * C + c];
            if (v == T(1)) {
                ++ones;
                target_idx[n] = c;
            } else if (v != T(0)) {
                throw ValidationError("target row " + std::to_string(n) + " is not one-hot");
            }
        }
        if (ones != 1) throw ValidationError("target row " + std::to_string(n) + " is not one-hot");
    }

    T total = 0;
    std::vector<T> lse(N);
    for (int n = 0; n < N; ++n) {
        const T* row = logits.data().data() + static_cast<std::size_t>(n) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T s = 0;
        for (int c = 0; c < C; ++c) s += std::exp(row[c] - mx);
        lse[n] = mx + std::log(s);
        total += lse[n] - row[target_idx[n]];
    }
    auto out = BasicTensor<T>::scalar(total / static_cast<T>(N));
    detail::check_finite(out, "softmax_cross_entropy");
    detail::record<T>(out, {logits, targets},
                      [ln = logits.node(), target_idx, lse, N, C](detail::Node<T>& o) {
                          if (!ln->needs_grad()) return;
                          ln->ensure_grad();
                          const T g = o.grad[0] / static_cast<T>(N);
                          for (int n = 0; n < N; ++n) {
                              const T* row = ln->data.data() + static_cast<std::size_t>(n) * C;
                              T* gr = ln->grad.data() + static_cast<std::size_t>(n) * C;
                              for (int c = 0; c < C; ++c) {
                                  T p = std::exp(row[c] - lse[n]);
                                  gr[c] += g * (p - (c == target_idx[n] ? T(1) : T(0)));
                              }
                          }
                      });
    return out;
}

// ---------------------------------------------------------------------------
// non-differentiable utilities

// Row-wise argmax; ties break toward the smallest index.
template <class T>
std::vector<int> argmax_rows(const BasicTensor<T>& m) {
    if (m.rank() != 2) throw DimensionError("argmax_rows expects a matrix");
    const int N = m.size(0), C = m.size(1);
    std::vector<int> out(N);
    for (int n = 0; n < N; ++n) {
        const T* row = m.data().data() + static_cast<std::size_t>(n) * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        out[n] = best;
    }
    return out;
}

}  // namespace fusion
