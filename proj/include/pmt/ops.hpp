#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "pmt/common.hpp"
#include "pmt/tape.hpp"
#include "pmt/tensor.hpp"

namespace pmt {

enum class Reduction { sum, mean };

namespace detail {

template <typename S>
using EigenRowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenRowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenRowMat<S>>;

template <typename S>
inline void axpy(Index n, S alpha, const S* x, S* y) {
  for (Index i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
inline void check_rank(const Tensor<S>& t, Index r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(r) +
                         ", got " + shape_str(t.shape()));
}

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!same_shape(a, b))
    throw DimensionError(std::string(what) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// cols is [C*kh*kw, Ho*Wo] row-major; zero padding outside the image.
template <typename S>
void im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw, Index stride,
            Index pad, Index Ho, Index Wo, S* cols) {
  const Index out_plane = Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        S* row = cols + ((c * kh + ki) * kw + kj) * out_plane;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            for (Index ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = S(0);
            continue;
          }
          const S* src = x + (c * H + iy) * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            row[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, Index C, Index H, Index W, Index kh, Index kw, Index stride,
                Index pad, Index Ho, Index Wo, S* dx) {
  const Index out_plane = Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const S* row = cols + ((c * kh + ki) * kw + kj) * out_plane;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          S* dst = dx + (c * H + iy) * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b, Tape<S>* tape) {
  detail::check_rank(a, 2, "matmul lhs");
  detail::check_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out({m, n});
  detail::MatMap<S>(out.data(), m, n).noalias() =
      detail::ConstMatMap<S>(a.data(), m, k) * detail::ConstMatMap<S>(b.data(), k, n);

  const bool rec = tracking(tape, {&a, &b});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("matmul", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
      detail::ConstMatMap<S> dy(out.grad(), m, n);
      if (a.requires_grad())
        detail::MatMap<S>(a.grad(), m, k).noalias() +=
            dy * detail::ConstMatMap<S>(b.data(), k, n).transpose();
      if (b.requires_grad())
        detail::MatMap<S>(b.grad(), k, n).noalias() +=
            detail::ConstMatMap<S>(a.data(), m, k).transpose() * dy;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax along one axis, with max subtraction
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(Tensor<S> x, Index axis, Tape<S>* tape) {
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("softmax axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
  const Index len = x.dim(axis);
  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= x.dim(d);
  for (Index d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  Tensor<S> out(x.shape());
  const S* xs = x.data();
  S* ys = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      S mx = xs[base];
      for (Index l = 1; l < len; ++l) mx = std::max(mx, xs[base + l * inner]);
      S total = S(0);
      for (Index l = 0; l < len; ++l) {
        const S e = std::exp(xs[base + l * inner] - mx);
        ys[base + l * inner] = e;
        total += e;
      }
      const S inv = S(1) / total;
      for (Index l = 0; l < len; ++l) ys[base + l * inner] *= inv;
    }
  }

  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("softmax", [x, out, axis]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index len = x.dim(axis);
      Index outer = 1, inner = 1;
      for (Index d = 0; d < axis; ++d) outer *= x.dim(d);
      for (Index d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
      const S* y = out.data();
      const S* dy = out.grad();
      S* dx = x.grad();
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const Index base = o * len * inner + i;
          S dot = S(0);
          for (Index l = 0; l < len; ++l) dot += y[base + l * inner] * dy[base + l * inner];
          for (Index l = 0; l < len; ++l) {
            const Index pos = base + l * inner;
            dx[pos] += y[pos] * (dy[pos] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding, NCHW
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> weight, Tensor<S> bias,
                 Index stride, Index padding, Tape<S>* tape) {
  detail::check_rank(x, 4, "conv2d input");
  detail::check_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1, got " + std::to_string(stride));
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Co = weight.dim(0), Ck = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (Ck != C)
    throw DimensionError("conv2d channels: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw DimensionError("conv2d kernel " + shape_str(weight.shape()) +
                         " does not fit padded input " + shape_str(x.shape()));
  const bool with_bias = bias.numel() != 0;
  if (with_bias && (bias.rank() != 1 || bias.dim(0) != Co))
    throw DimensionError("conv2d bias " + shape_str(bias.shape()) + " vs Cout " + std::to_string(Co));

  const Index Ho = (H + 2 * padding - kh) / stride + 1;
  const Index Wo = (W + 2 * padding - kw) / stride + 1;
  const Index ckk = C * kh * kw;
  const Index out_plane = Ho * Wo;
  Tensor<S> out({N, Co, Ho, Wo});

  const bool one_by_one = (kh == 1 && kw == 1 && stride == 1 && padding == 0);
  std::vector<S> cols;
  if (!one_by_one) cols.resize(static_cast<std::size_t>(ckk * out_plane));
  for (Index n = 0; n < N; ++n) {
    const S* xn = x.data() + n * C * H * W;
    S* yn = out.data() + n * Co * out_plane;
    if (one_by_one) {
      detail::MatMap<S>(yn, Co, out_plane).noalias() =
          detail::ConstMatMap<S>(weight.data(), Co, C) * detail::ConstMatMap<S>(xn, C, out_plane);
    } else {
      detail::im2col(xn, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
      detail::MatMap<S>(yn, Co, out_plane).noalias() =
          detail::ConstMatMap<S>(weight.data(), Co, ckk) *
          detail::ConstMatMap<S>(cols.data(), ckk, out_plane);
    }
    if (with_bias) {
      for (Index co = 0; co < Co; ++co) {
        const S b = bias.data()[co];
        S* row = yn + co * out_plane;
        for (Index p = 0; p < out_plane; ++p) row[p] += b;
      }
    }
  }

  const bool rec = with_bias ? tracking(tape, {&x, &weight, &bias}) : tracking(tape, {&x, &weight});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("conv2d", [x, weight, bias, out, stride, padding, with_bias]() mutable {
      if (!out.has_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const Index Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
      const Index Ho = out.dim(2), Wo = out.dim(3);
      const Index ckk = C * kh * kw;
      const Index out_plane = Ho * Wo;
      const bool one_by_one = (kh == 1 && kw == 1 && stride == 1 && padding == 0);
      std::vector<S> cols, dcols;
      if (!one_by_one) {
        cols.resize(static_cast<std::size_t>(ckk * out_plane));
        dcols.resize(static_cast<std::size_t>(ckk * out_plane));
      }
      for (Index n = 0; n < N; ++n) {
        const S* xn = x.data() + n * C * H * W;
        const S* dyn = out.grad() + n * Co * out_plane;
        detail::ConstMatMap<S> dy(dyn, Co, out_plane);
        if (one_by_one) {
          if (weight.requires_grad())
            detail::MatMap<S>(weight.grad(), Co, C).noalias() +=
                dy * detail::ConstMatMap<S>(xn, C, out_plane).transpose();
          if (x.requires_grad())
            detail::MatMap<S>(x.grad() + n * C * H * W, C, out_plane).noalias() +=
                detail::ConstMatMap<S>(weight.data(), Co, C).transpose() * dy;
        } else {
          detail::im2col(xn, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
          if (weight.requires_grad())
            detail::MatMap<S>(weight.grad(), Co, ckk).noalias() +=
                dy * detail::ConstMatMap<S>(cols.data(), ckk, out_plane).transpose();
          if (x.requires_grad()) {
            detail::MatMap<S>(dcols.data(), ckk, out_plane).noalias() =
                detail::ConstMatMap<S>(weight.data(), Co, ckk).transpose() * dy;
            detail::col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo,
                               x.grad() + n * C * H * W);
          }
        }
        if (with_bias && bias.requires_grad()) {
          S* db = bias.grad();
          for (Index co = 0; co < Co; ++co) {
            S acc = S(0);
            const S* row = dyn + co * out_plane;
            for (Index p = 0; p < out_plane; ++p) acc += row[p];
            db[co] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> weight, Index stride, Index padding,
                 Tape<S>* tape) {
  return conv2d(x, weight, Tensor<S>(), stride, padding, tape);
}

// ---------------------------------------------------------------------------
// batchnorm2d over N*H*W per channel; biased variance, running stats updated
// in training mode with the configured momentum
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> batchnorm2d(Tensor<S> x, Tensor<S> gamma, Tensor<S> beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                      S momentum, S eps, Tape<S>* tape) {
  detail::check_rank(x, 4, "batchnorm2d input");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("batchnorm2d gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs C=" + std::to_string(C));
  if (!(eps > S(0))) throw ConfigError("batchnorm2d eps must be > 0");
  const Index M = N * H * W;
  if (training && M == 1)
    throw ContractError("degenerate-batch", "batchnorm2d training needs N*H*W > 1, got 1");

  const Index plane = H * W;
  std::vector<S> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
  if (training) {
    for (Index c = 0; c < C; ++c) {
      S sum = S(0), sumsq = S(0);
      for (Index n = 0; n < N; ++n) {
        const S* p = x.data() + (n * C + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += p[i] * p[i];
        }
      }
      const S mu = sum / S(M);
      S var = sumsq / S(M) - mu * mu;
      if (var < S(0)) var = S(0);
      mean[c] = mu;
      invstd[c] = S(1) / std::sqrt(var + eps);
      running_mean.data()[c] = (S(1) - momentum) * running_mean.data()[c] + momentum * mu;
      running_var.data()[c] = (S(1) - momentum) * running_var.data()[c] + momentum * var;
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      invstd[c] = S(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }

  Tensor<S> out(x.shape());
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S* p = x.data() + (n * C + c) * plane;
      S* q = out.data() + (n * C + c) * plane;
      const S g = gamma.data()[c], b = beta.data()[c], mu = mean[c], is = invstd[c];
      for (Index i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * g + b;
    }
  }

  const bool rec = tracking(tape, {&x, &gamma, &beta});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("batchnorm2d", [x, gamma, beta, out, mean, invstd, training]() mutable {
      if (!out.has_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
      const Index M = N * plane;
      for (Index c = 0; c < C; ++c) {
        const S g = gamma.data()[c], mu = mean[c], is = invstd[c];
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for (Index n = 0; n < N; ++n) {
          const S* p = x.data() + (n * C + c) * plane;
          const S* dq = out.grad() + (n * C + c) * plane;
          for (Index i = 0; i < plane; ++i) {
            sum_dy += dq[i];
            sum_dy_xhat += dq[i] * (p[i] - mu) * is;
          }
        }
        if (gamma.requires_grad()) gamma.grad()[c] += sum_dy_xhat;
        if (beta.requires_grad()) beta.grad()[c] += sum_dy;
        if (x.requires_grad()) {
          const S mean_dy = sum_dy / S(M);
          const S mean_dy_xhat = sum_dy_xhat / S(M);
          for (Index n = 0; n < N; ++n) {
            const S* p = x.data() + (n * C + c) * plane;
            const S* dq = out.grad() + (n * C + c) * plane;
            S* dp = x.grad() + (n * C + c) * plane;
            if (training) {
              for (Index i = 0; i < plane; ++i) {
                const S xhat = (p[i] - mu) * is;
                dp[i] += g * is * (dq[i] - mean_dy - xhat * mean_dy_xhat);
              }
            } else {
              for (Index i = 0; i < plane; ++i) dp[i] += g * is * dq[i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(Tensor<S> x, Tape<S>* tape) {
  Tensor<S> out(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("relu", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index n = x.numel();
      S* dx = x.grad();
      for (Index i = 0; i < n; ++i)
        if (x.data()[i] > S(0)) dx[i] += out.grad()[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(Tensor<S> x, Tape<S>* tape) {
  Tensor<S> out(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) {
    const S v = x.data()[i];
    if (v >= S(0)) {
      out.data()[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      out.data()[i] = e / (S(1) + e);
    }
  }
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("sigmoid", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index n = x.numel();
      S* dx = x.grad();
      for (Index i = 0; i < n; ++i) {
        const S y = out.data()[i];
        dx[i] += out.grad()[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b, Tape<S>* tape) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  const bool rec = tracking(tape, {&a, &b});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("add", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const Index n = a.numel();
      if (a.requires_grad()) detail::axpy(n, S(1), out.grad(), a.grad());
      if (b.requires_grad()) detail::axpy(n, S(1), out.grad(), b.grad());
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b, Tape<S>* tape) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  const bool rec = tracking(tape, {&a, &b});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("mul", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const Index n = a.numel();
      const S* dy = out.grad();
      if (a.requires_grad()) {
        S* da = a.grad();
        for (Index i = 0; i < n; ++i) da[i] += dy[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        S* db = b.grad();
        for (Index i = 0; i < n; ++i) db[i] += dy[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(Tensor<S> x, S factor, Tape<S>* tape) {
  Tensor<S> out(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = factor * x.data()[i];
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("scale", [x, out, factor]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      detail::axpy(x.numel(), factor, out.grad(), x.grad());
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_channels(std::vector<Tensor<S>> parts, Tape<S>* tape) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  for (const auto& p : parts) detail::check_rank(p, 4, "concat_channels input");
  const Index N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  Index C = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
      throw DimensionError("concat_channels: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    C += p.dim(1);
  }
  Tensor<S> out({N, C, H, W});
  const Index plane = H * W;
  for (Index n = 0; n < N; ++n) {
    Index c0 = 0;
    for (const auto& p : parts) {
      const Index pc = p.dim(1);
      std::copy(p.data() + n * pc * plane, p.data() + (n + 1) * pc * plane,
                out.data() + (n * C + c0) * plane);
      c0 += pc;
    }
  }
  bool rec = false;
  if (tape)
    for (const auto& p : parts) rec = rec || p.requires_grad();
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("concat_channels", [parts, out]() mutable {
      if (!out.has_grad()) return;
      const Index N = out.dim(0), C = out.dim(1), plane = out.dim(2) * out.dim(3);
      for (Index n = 0; n < N; ++n) {
        Index c0 = 0;
        for (auto& p : parts) {
          const Index pc = p.dim(1);
          if (p.requires_grad())
            detail::axpy(pc * plane, S(1), out.grad() + (n * C + c0) * plane,
                         p.grad() + n * pc * plane);
          c0 += pc;
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  return concat_channels(std::vector<Tensor<S>>{a, b}, tape);
}

template <typename S>
Tensor<S> slice_channels(Tensor<S> x, Index c_begin, Index c_end, Tape<S>* tape) {
  detail::check_rank(x, 4, "slice_channels input");
  if (c_begin < 0 || c_end > x.dim(1) || c_begin >= c_end)
    throw DimensionError("slice_channels [" + std::to_string(c_begin) + "," +
                         std::to_string(c_end) + ") of " + shape_str(x.shape()));
  const Index N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Index Cs = c_end - c_begin;
  Tensor<S> out({N, Cs, x.dim(2), x.dim(3)});
  for (Index n = 0; n < N; ++n)
    std::copy(x.data() + (n * C + c_begin) * plane, x.data() + (n * C + c_end) * plane,
              out.data() + n * Cs * plane);
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("slice_channels", [x, out, c_begin]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
      const Index Cs = out.dim(1);
      for (Index n = 0; n < N; ++n)
        detail::axpy(Cs * plane, S(1), out.grad() + n * Cs * plane,
                     x.grad() + (n * C + c_begin) * plane);
    });
  }
  return out;
}

// y[n,c,h,w] = x[n,c,h,w] * a[n,0,h,w]; a broadcasts across channels.
template <typename S>
Tensor<S> mul_channel_broadcast(Tensor<S> x, Tensor<S> a, Tape<S>* tape) {
  detail::check_rank(x, 4, "mul_channel_broadcast input");
  detail::check_rank(a, 4, "mul_channel_broadcast gate");
  if (a.dim(1) != 1 || a.dim(0) != x.dim(0) || a.dim(2) != x.dim(2) || a.dim(3) != x.dim(3))
    throw DimensionError("mul_channel_broadcast " + shape_str(x.shape()) + " vs " +
                         shape_str(a.shape()));
  const Index N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<S> out(x.shape());
  for (Index n = 0; n < N; ++n) {
    const S* an = a.data() + n * plane;
    for (Index c = 0; c < C; ++c) {
      const S* p = x.data() + (n * C + c) * plane;
      S* q = out.data() + (n * C + c) * plane;
      for (Index i = 0; i < plane; ++i) q[i] = p[i] * an[i];
    }
  }
  const bool rec = tracking(tape, {&x, &a});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("mul_channel_broadcast", [x, a, out]() mutable {
      if (!out.has_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
      for (Index n = 0; n < N; ++n) {
        const S* an = a.data() + n * plane;
        for (Index c = 0; c < C; ++c) {
          const S* dy = out.grad() + (n * C + c) * plane;
          if (x.requires_grad()) {
            S* dx = x.grad() + (n * C + c) * plane;
            for (Index i = 0; i < plane; ++i) dx[i] += dy[i] * an[i];
          }
          if (a.requires_grad()) {
            const S* p = x.data() + (n * C + c) * plane;
            S* da = a.grad() + n * plane;
            for (Index i = 0; i < plane; ++i) da[i] += dy[i] * p[i];
          }
        }
      }
    });
  }
  return out;
}

// Transposes the two spatial axes of an NCHW tensor.
template <typename S>
Tensor<S> permute_hw(Tensor<S> x, Tape<S>* tape) {
  detail::check_rank(x, 4, "permute_hw input");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out({N, C, W, H});
  for (Index nc = 0; nc < N * C; ++nc) {
    const S* p = x.data() + nc * H * W;
    S* q = out.data() + nc * H * W;
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) q[w * H + h] = p[h * W + w];
  }
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("permute_hw", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      S* dx = x.grad();
      const S* dy = out.grad();
      for (Index nc = 0; nc < N * C; ++nc)
        for (Index h = 0; h < H; ++h)
          for (Index w = 0; w < W; ++w) dx[nc * H * W + h * W + w] += dy[nc * H * W + w * H + h];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear resize, align-corners convention
// ---------------------------------------------------------------------------

namespace detail {

inline void bilinear_axis(Index out_len, Index in_len, Index i, Index& lo, Index& hi,
                          double& w_hi) {
  if (in_len == 1 || out_len == 1) {
    lo = hi = (in_len == 1) ? 0 : 0;
    w_hi = 0.0;
    return;
  }
  const double src = static_cast<double>(i) * static_cast<double>(in_len - 1) /
                     static_cast<double>(out_len - 1);
  lo = static_cast<Index>(std::floor(src));
  if (lo > in_len - 2) lo = in_len - 2;
  hi = lo + 1;
  w_hi = src - static_cast<double>(lo);
}

}  // namespace detail

template <typename S>
Tensor<S> bilinear_resize(Tensor<S> x, Index out_h, Index out_w, Tape<S>* tape) {
  detail::check_rank(x, 4, "bilinear_resize input");
  if (out_h < 1 || out_w < 1)
    throw ConfigError("bilinear_resize target must be >= 1, got " + std::to_string(out_h) + "x" +
                      std::to_string(out_w));
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out({N, C, out_h, out_w});
  for (Index nc = 0; nc < N * C; ++nc) {
    const S* p = x.data() + nc * H * W;
    S* q = out.data() + nc * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      Index y0, y1;
      double wy;
      detail::bilinear_axis(out_h, H, oy, y0, y1, wy);
      for (Index ox = 0; ox < out_w; ++ox) {
        Index x0, x1;
        double wx;
        detail::bilinear_axis(out_w, W, ox, x0, x1, wx);
        const double v = (1.0 - wy) * ((1.0 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                         wy * ((1.0 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
        q[oy * out_w + ox] = static_cast<S>(v);
      }
    }
  }
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("bilinear_resize", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const Index out_h = out.dim(2), out_w = out.dim(3);
      for (Index nc = 0; nc < N * C; ++nc) {
        const S* dq = out.grad() + nc * out_h * out_w;
        S* dp = x.grad() + nc * H * W;
        for (Index oy = 0; oy < out_h; ++oy) {
          Index y0, y1;
          double wy;
          detail::bilinear_axis(out_h, H, oy, y0, y1, wy);
          for (Index ox = 0; ox < out_w; ++ox) {
            Index x0, x1;
            double wx;
            detail::bilinear_axis(out_w, W, ox, x0, x1, wx);
            const S g = dq[oy * out_w + ox];
            dp[y0 * W + x0] += static_cast<S>((1.0 - wy) * (1.0 - wx)) * g;
            dp[y0 * W + x1] += static_cast<S>((1.0 - wy) * wx) * g;
            dp[y1 * W + x0] += static_cast<S>(wy * (1.0 - wx)) * g;
            dp[y1 * W + x1] += static_cast<S>(wy * wx) * g;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(Tensor<S> x, Tape<S>* tape) {
  S total = S(0);
  for (Index i = 0; i < x.numel(); ++i) total += x.data()[i];
  Tensor<S> out = Tensor<S>::scalar(total);
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("sum", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const S g = out.grad()[0];
      S* dx = x.grad();
      for (Index i = 0; i < x.numel(); ++i) dx[i] += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(Tensor<S> x, Tape<S>* tape) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  S total = S(0);
  for (Index i = 0; i < x.numel(); ++i) total += x.data()[i];
  Tensor<S> out = Tensor<S>::scalar(total / S(x.numel()));
  const bool rec = tracking(tape, {&x});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("mean", [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const S g = out.grad()[0] / S(x.numel());
      S* dx = x.grad();
      for (Index i = 0; i < x.numel(); ++i) dx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy on probabilities, clamped to [eps, 1-eps]
// ---------------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-7;

template <typename S>
Tensor<S> bce_loss(Tensor<S> pred, Tensor<S> target, Reduction reduction,
                   Tape<S>* tape) {
  detail::require_same_shape(pred, target, "bce_loss");
  const Index n = pred.numel();
  const S lo = static_cast<S>(kBceClamp), hi = S(1) - static_cast<S>(kBceClamp);
  S total = S(0);
  for (Index i = 0; i < n; ++i) {
    S p = pred.data()[i];
    if (p < lo) p = lo;
    if (p > hi) p = hi;
    const S t = target.data()[i];
    total -= t * std::log(p) + (S(1) - t) * std::log(S(1) - p);
  }
  const S denom = reduction == Reduction::mean ? S(n) : S(1);
  Tensor<S> out = Tensor<S>::scalar(total / denom);
  const bool rec = tracking(tape, {&pred});
  out.set_requires_grad(rec);
  if (rec) {
    tape->record("bce_loss", [pred, target, out, denom]() mutable {
      if (!out.has_grad() || !pred.requires_grad()) return;
      const Index n = pred.numel();
      const S lo = static_cast<S>(kBceClamp), hi = S(1) - static_cast<S>(kBceClamp);
      const S g = out.grad()[0] / denom;
      S* dp = pred.grad();
      for (Index i = 0; i < n; ++i) {
        const S p = pred.data()[i];
        if (p < lo || p > hi) continue;  // clamp active: zero subgradient
        const S t = target.data()[i];
        dp[i] += g * (p - t) / (p * (S(1) - p));
      }
    });
  }
  return out;
}

}  // namespace pmt
