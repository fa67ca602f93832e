#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pmt/nn.hpp"
#include "pmt/ops.hpp"
#include "pmt/rng.hpp"

namespace pmt {

enum class Axis { height, width };

// Attention window of width `span` centered on `center`, truncated at the
// axis borders (never wrapped). For even widths the extra element sits on
// the low side. The effective width never exceeds min(span, axis_len).
struct SpanWindow {
  Index lo, hi;  // inclusive
  Index width() const { return hi - lo + 1; }
};

inline SpanWindow span_window(Index center, Index span, Index axis_len) {
  Index lo = center - span / 2;
  Index hi = center + (span - 1) / 2;
  if (lo < 0) lo = 0;
  if (hi > axis_len - 1) hi = axis_len - 1;
  return {lo, hi};
}

// Smallest span whose centered window covers the whole axis from every
// position, i.e. the span that makes an axial pass global.
inline Index full_axis_span(Index axis_len) { return 2 * axis_len - 1; }

// ---------------------------------------------------------------------------
// learnable pieces
// ---------------------------------------------------------------------------

// Scalar gates modulating the positional-encoding and value terms of one
// attention layer. While not trainable, backward leaves the values untouched
// (their gradient slots stay zero and the optimizer skips them).
template <typename S>
struct GateSet {
  Tensor<S> q, k, v1, v2;  // each shape [1]

  static GateSet constants(S gq, S gk, S gv1, S gv2, bool trainable = true) {
    GateSet g;
    g.q = Tensor<S>::scalar(gq);
    g.k = Tensor<S>::scalar(gk);
    g.v1 = Tensor<S>::scalar(gv1);
    g.v2 = Tensor<S>::scalar(gv2);
    g.set_trainable(trainable);
    return g;
  }

  bool trainable() const { return q.requires_grad(); }

  void set_trainable(bool v) {
    q.set_requires_grad(v);
    k.set_requires_grad(v);
    v1.set_requires_grad(v);
    v2.set_requires_grad(v);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params) {
    params.emplace_back(prefix + ".gate_q", q);
    params.emplace_back(prefix + ".gate_k", k);
    params.emplace_back(prefix + ".gate_v1", v1);
    params.emplace_back(prefix + ".gate_v2", v2);
  }
};

// Relative position encodings indexed by the signed offset neighbor-minus-
// center. Tables run over offsets in [-(span-1), span-1], so every lookup
// with |offset| < span succeeds.
template <typename S>
struct RelPosEncoding {
  Index span = 0;
  Tensor<S> r_q, r_k;  // [d_qk, 2*span-1]
  Tensor<S> r_v;       // [d_v,  2*span-1]

  static RelPosEncoding make(Index d_qk, Index d_v, Index span, S init_bound, RandomSource& rng) {
    if (span < 1) throw ConfigError("encoding span must be >= 1, got " + std::to_string(span));
    RelPosEncoding enc;
    enc.span = span;
    const Index len = 2 * span - 1;
    enc.r_q = Tensor<S>({d_qk, len});
    enc.r_k = Tensor<S>({d_qk, len});
    enc.r_v = Tensor<S>({d_v, len});
    rng.fill_uniform(enc.r_q, -init_bound, init_bound);
    rng.fill_uniform(enc.r_k, -init_bound, init_bound);
    rng.fill_uniform(enc.r_v, -init_bound, init_bound);
    enc.r_q.set_requires_grad(true);
    enc.r_k.set_requires_grad(true);
    enc.r_v.set_requires_grad(true);
    return enc;
  }

  void collect(const std::string& prefix, NamedTensors<S>& params) {
    params.emplace_back(prefix + ".r_q", r_q);
    params.emplace_back(prefix + ".r_k", r_k);
    params.emplace_back(prefix + ".r_v", r_v);
  }
};

// One attention head: query/key/value projections plus its gates and
// positional-encoding tables.
template <typename S>
struct AxialHead {
  Tensor<S> w_q, w_k;  // [d_qk, c_in]
  Tensor<S> w_v;       // [d_v, c_in]
  GateSet<S> gates;
  RelPosEncoding<S> enc;

  static AxialHead make(Index c_in, Index d_qk, Index d_v, Index span, S gate_init,
                        S enc_bound, RandomSource& rng) {
    AxialHead head;
    head.w_q = Tensor<S>({d_qk, c_in});
    head.w_k = Tensor<S>({d_qk, c_in});
    head.w_v = Tensor<S>({d_v, c_in});
    init::projection_weight(head.w_q, c_in, rng);
    init::projection_weight(head.w_k, c_in, rng);
    init::projection_weight(head.w_v, c_in, rng);
    head.w_q.set_requires_grad(true);
    head.w_k.set_requires_grad(true);
    head.w_v.set_requires_grad(true);
    head.gates = GateSet<S>::constants(gate_init, gate_init, gate_init, gate_init);
    head.enc = RelPosEncoding<S>::make(d_qk, d_v, span, enc_bound, rng);
    return head;
  }

  void collect(const std::string& prefix, NamedTensors<S>& params) {
    params.emplace_back(prefix + ".w_q", w_q);
    params.emplace_back(prefix + ".w_k", w_k);
    params.emplace_back(prefix + ".w_v", w_v);
    gates.collect(prefix, params);
    enc.collect(prefix, params);
  }
};

// ---------------------------------------------------------------------------
// dense self-attention reference
// ---------------------------------------------------------------------------

// Trusted brute-force reference: explicit T x T attention evaluated with
// plain loops, kept independent of the windowed kernel and of the GEMM
// path. Not differentiable; verification only.
template <typename S>
Tensor<S> full_self_attention_oracle(const Tensor<S>& x, const Tensor<S>& w_q,
                                     const Tensor<S>& w_k, const Tensor<S>& w_v) {
  detail::check_rank(x, 2, "oracle input");
  const Index T = x.dim(0), C = x.dim(1);
  if (T < 1) throw DimensionError("oracle needs at least one token");
  if (w_q.rank() != 2 || w_k.rank() != 2 || w_v.rank() != 2 || w_q.dim(1) != C ||
      w_k.dim(1) != C || w_v.dim(1) != C || w_q.dim(0) != w_k.dim(0))
    throw DimensionError("oracle projections " + shape_str(w_q.shape()) + "/" +
                         shape_str(w_k.shape()) + "/" + shape_str(w_v.shape()) + " vs input " +
                         shape_str(x.shape()));
  const Index d = w_q.dim(0), dv = w_v.dim(0);

  std::vector<S> q(T * d), k(T * d), v(T * dv);
  for (Index t = 0; t < T; ++t) {
    for (Index r = 0; r < d; ++r) {
      S aq = S(0), ak = S(0);
      for (Index c = 0; c < C; ++c) {
        aq += w_q.data()[r * C + c] * x.data()[t * C + c];
        ak += w_k.data()[r * C + c] * x.data()[t * C + c];
      }
      q[t * d + r] = aq;
      k[t * d + r] = ak;
    }
    for (Index r = 0; r < dv; ++r) {
      S av = S(0);
      for (Index c = 0; c < C; ++c) av += w_v.data()[r * C + c] * x.data()[t * C + c];
      v[t * dv + r] = av;
    }
  }

  const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d)));
  Tensor<S> out({T, dv});
  std::vector<S> logits(T), probs(T);
  for (Index i = 0; i < T; ++i) {
    for (Index j = 0; j < T; ++j) {
      S dot = S(0);
      for (Index r = 0; r < d; ++r) dot += q[i * d + r] * k[j * d + r];
      logits[j] = dot * inv_sqrt;
    }
    S mx = logits[0];
    for (Index j = 1; j < T; ++j) mx = std::max(mx, logits[j]);
    S total = S(0);
    for (Index j = 0; j < T; ++j) {
      probs[j] = std::exp(logits[j] - mx);
      total += probs[j];
    }
    for (Index j = 0; j < T; ++j) probs[j] /= total;
    for (Index r = 0; r < dv; ++r) {
      S acc = S(0);
      for (Index j = 0; j < T; ++j) acc += probs[j] * v[j * dv + r];
      out.data()[i * dv + r] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// gated axial attention kernel
// ---------------------------------------------------------------------------

namespace detail {

// Per-line softmax over the truncated window at center j. Shared by forward
// and backward so both see bit-identical probabilities; zero gates skip their
// logit terms entirely so a zero-gated layer never reads the tables in the
// value path.
template <typename S>
inline void axial_line_probs(const S* qt, const S* kt, const S* rq, const S* rk, Index d_qk,
                             Index span, Index axis_len, Index j, S inv_sqrt, S gq, S gk,
                             SpanWindow& win, S* probs) {
  win = span_window(j, span, axis_len);
  const Index width = win.width();
  S mx = -std::numeric_limits<S>::infinity();
  for (Index w = win.lo; w <= win.hi; ++w) {
    const Index t = w - j + span - 1;
    S l = S(0);
    for (Index r = 0; r < d_qk; ++r) l += qt[j * d_qk + r] * kt[w * d_qk + r];
    l *= inv_sqrt;
    if (gq != S(0)) {
      S pq = S(0);
      for (Index r = 0; r < d_qk; ++r) pq += qt[j * d_qk + r] * rq[t * d_qk + r];
      l += gq * pq;
    }
    if (gk != S(0)) {
      S pk = S(0);
      for (Index r = 0; r < d_qk; ++r) pk += kt[w * d_qk + r] * rk[t * d_qk + r];
      l += gk * pk;
    }
    probs[w - win.lo] = l;
    mx = std::max(mx, l);
  }
  S total = S(0);
  for (Index u = 0; u < width; ++u) {
    probs[u] = std::exp(probs[u] - mx);
    total += probs[u];
  }
  const S inv = S(1) / total;
  for (Index u = 0; u < width; ++u) probs[u] *= inv;
}

// Copies table [d, 2*span-1] into offset-major scratch [2*span-1, d].
template <typename S>
inline std::vector<S> transpose_table(const Tensor<S>& table) {
  const Index d = table.dim(0), len = table.dim(1);
  std::vector<S> out(static_cast<std::size_t>(d * len));
  for (Index r = 0; r < d; ++r)
    for (Index t = 0; t < len; ++t) out[t * d + r] = table.data()[r * len + t];
  return out;
}

template <typename S>
Tensor<S> axial_attention_width(Tensor<S> x, const AxialHead<S>& head, Index span,
                                Tape<S>* tape) {
  check_rank(x, 4, "axial attention input");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index d_qk = head.w_q.dim(0), d_v = head.w_v.dim(0);
  if (head.w_q.dim(1) != C || head.w_k.dim(1) != C || head.w_v.dim(1) != C)
    throw DimensionError("axial attention projections expect " +
                         std::to_string(head.w_q.dim(1)) + " channels, input has " +
                         std::to_string(C));
  if (head.enc.span != span)
    throw ConfigError("encoding tables built for span " + std::to_string(head.enc.span) +
                      ", layer runs span " + std::to_string(span));
  const Index plane = H * W;

  // 1x1 projections as per-sample GEMMs.
  Tensor<S> q({N, d_qk, H, W}), k({N, d_qk, H, W}), v({N, d_v, H, W});
  for (Index n = 0; n < N; ++n) {
    ConstMatMap<S> xn(x.data() + n * C * plane, C, plane);
    MatMap<S>(q.data() + n * d_qk * plane, d_qk, plane).noalias() =
        ConstMatMap<S>(head.w_q.data(), d_qk, C) * xn;
    MatMap<S>(k.data() + n * d_qk * plane, d_qk, plane).noalias() =
        ConstMatMap<S>(head.w_k.data(), d_qk, C) * xn;
    MatMap<S>(v.data() + n * d_v * plane, d_v, plane).noalias() =
        ConstMatMap<S>(head.w_v.data(), d_v, C) * xn;
  }

  const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d_qk)));
  const S gq = head.gates.q.data()[0], gk = head.gates.k.data()[0];
  const S gv1 = head.gates.v1.data()[0], gv2 = head.gates.v2.data()[0];
  const std::vector<S> rqT = transpose_table(head.enc.r_q);
  const std::vector<S> rkT = transpose_table(head.enc.r_k);
  const std::vector<S> rvT = transpose_table(head.enc.r_v);

  Tensor<S> out({N, d_v, H, W});
  {
    std::vector<S> qt(W * d_qk), kt(W * d_qk), vt(W * d_v), probs(std::min(span, W)), acc(d_v);
    for (Index n = 0; n < N; ++n) {
      for (Index i = 0; i < H; ++i) {
        const Index line = i * W;
        for (Index w = 0; w < W; ++w) {
          for (Index r = 0; r < d_qk; ++r) {
            qt[w * d_qk + r] = q.data()[(n * d_qk + r) * plane + line + w];
            kt[w * d_qk + r] = k.data()[(n * d_qk + r) * plane + line + w];
          }
          for (Index r = 0; r < d_v; ++r)
            vt[w * d_v + r] = v.data()[(n * d_v + r) * plane + line + w];
        }
        for (Index j = 0; j < W; ++j) {
          SpanWindow win{};
          axial_line_probs(qt.data(), kt.data(), rqT.data(), rkT.data(), d_qk, span, W, j,
                           inv_sqrt, gq, gk, win, probs.data());
          std::fill(acc.begin(), acc.end(), S(0));
          for (Index w = win.lo; w <= win.hi; ++w) {
            const S p = probs[w - win.lo];
            const Index t = w - j + span - 1;
            if (gv1 != S(0)) {
              const S pg = p * gv1;
              for (Index r = 0; r < d_v; ++r) acc[r] += pg * vt[w * d_v + r];
            }
            if (gv2 != S(0)) {
              const S pg = p * gv2;
              for (Index r = 0; r < d_v; ++r) acc[r] += pg * rvT[t * d_v + r];
            }
          }
          for (Index r = 0; r < d_v; ++r) out.data()[(n * d_v + r) * plane + line + j] = acc[r];
        }
      }
    }
  }

  const bool rec = tracking(tape, {&x, &head.w_q, &head.w_k, &head.w_v, &head.gates.q,
                                   &head.gates.k, &head.gates.v1, &head.gates.v2, &head.enc.r_q,
                                   &head.enc.r_k, &head.enc.r_v});
  out.set_requires_grad(rec);
  if (rec) {
    AxialHead<S> h = head;  // shared tensor handles
    tape->record("gated_axial_attention", [x, q, k, v, out, h, span, inv_sqrt]() mutable {
      if (!out.has_grad()) return;
      const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const Index d_qk = h.w_q.dim(0), d_v = h.w_v.dim(0);
      const Index plane = H * W;
      const S gq = h.gates.q.data()[0], gk = h.gates.k.data()[0];
      const S gv1 = h.gates.v1.data()[0], gv2 = h.gates.v2.data()[0];
      const std::vector<S> rqT = transpose_table(h.enc.r_q);
      const std::vector<S> rkT = transpose_table(h.enc.r_k);
      const std::vector<S> rvT = transpose_table(h.enc.r_v);
      const Index tlen = 2 * span - 1;

      const bool need_gates = h.gates.q.requires_grad();
      const bool need_tables =
          h.enc.r_q.requires_grad() || h.enc.r_k.requires_grad() || h.enc.r_v.requires_grad();

      std::vector<S> dqf(N * d_qk * plane, S(0)), dkf(N * d_qk * plane, S(0)),
          dvf(N * d_v * plane, S(0));
      std::vector<S> drqT, drkT, drvT;
      if (need_tables) {
        drqT.assign(tlen * d_qk, S(0));
        drkT.assign(tlen * d_qk, S(0));
        drvT.assign(tlen * d_v, S(0));
      }
      S dgq = S(0), dgk = S(0), dgv1 = S(0), dgv2 = S(0);

      std::vector<S> qt(W * d_qk), kt(W * d_qk), vt(W * d_v);
      std::vector<S> probs(std::min(span, W)), ds(std::min(span, W)), dy(d_v);
      for (Index n = 0; n < N; ++n) {
        for (Index i = 0; i < H; ++i) {
          const Index line = i * W;
          for (Index w = 0; w < W; ++w) {
            for (Index r = 0; r < d_qk; ++r) {
              qt[w * d_qk + r] = q.data()[(n * d_qk + r) * plane + line + w];
              kt[w * d_qk + r] = k.data()[(n * d_qk + r) * plane + line + w];
            }
            for (Index r = 0; r < d_v; ++r)
              vt[w * d_v + r] = v.data()[(n * d_v + r) * plane + line + w];
          }
          for (Index j = 0; j < W; ++j) {
            SpanWindow win{};
            axial_line_probs(qt.data(), kt.data(), rqT.data(), rkT.data(), d_qk, span, W, j,
                             inv_sqrt, gq, gk, win, probs.data());
            for (Index r = 0; r < d_v; ++r)
              dy[r] = out.grad()[(n * d_v + r) * plane + line + j];

            // value-side gradients and ds_w = dy . (gv1 v_w + gv2 rv_t)
            S dot = S(0);
            for (Index w = win.lo; w <= win.hi; ++w) {
              const Index u = w - win.lo;
              const Index t = w - j + span - 1;
              const S p = probs[u];
              S dy_v = S(0), dy_rv = S(0);
              for (Index r = 0; r < d_v; ++r) dy_v += dy[r] * vt[w * d_v + r];
              if (need_gates || gv2 != S(0))
                for (Index r = 0; r < d_v; ++r) dy_rv += dy[r] * rvT[t * d_v + r];
              if (need_gates) {
                dgv1 += p * dy_v;
                dgv2 += p * dy_rv;
              }
              if (gv1 != S(0)) {
                const S pg = p * gv1;
                for (Index r = 0; r < d_v; ++r)
                  dvf[(n * d_v + r) * plane + line + w] += pg * dy[r];
              }
              if (need_tables && gv2 != S(0)) {
                const S pg = p * gv2;
                for (Index r = 0; r < d_v; ++r) drvT[t * d_v + r] += pg * dy[r];
              }
              ds[u] = gv1 * dy_v + gv2 * dy_rv;
              dot += p * ds[u];
            }
            // softmax backward and the three logit terms
            for (Index w = win.lo; w <= win.hi; ++w) {
              const Index u = w - win.lo;
              const Index t = w - j + span - 1;
              const S dl = probs[u] * (ds[u] - dot);
              if (dl == S(0)) continue;
              for (Index r = 0; r < d_qk; ++r) {
                const S qv = qt[j * d_qk + r], kv = kt[w * d_qk + r];
                dqf[(n * d_qk + r) * plane + line + j] +=
                    dl * (inv_sqrt * kv + gq * rqT[t * d_qk + r]);
                dkf[(n * d_qk + r) * plane + line + w] +=
                    dl * (inv_sqrt * qv + gk * rkT[t * d_qk + r]);
              }
              if (need_tables) {
                for (Index r = 0; r < d_qk; ++r) {
                  drqT[t * d_qk + r] += dl * gq * qt[j * d_qk + r];
                  drkT[t * d_qk + r] += dl * gk * kt[w * d_qk + r];
                }
              }
              if (need_gates) {
                S q_rq = S(0), k_rk = S(0);
                for (Index r = 0; r < d_qk; ++r) {
                  q_rq += qt[j * d_qk + r] * rqT[t * d_qk + r];
                  k_rk += kt[w * d_qk + r] * rkT[t * d_qk + r];
                }
                dgq += dl * q_rq;
                dgk += dl * k_rk;
              }
            }
          }
        }
      }

      if (need_gates) {
        h.gates.q.grad()[0] += dgq;
        h.gates.k.grad()[0] += dgk;
        h.gates.v1.grad()[0] += dgv1;
        h.gates.v2.grad()[0] += dgv2;
      }
      if (need_tables) {
        if (h.enc.r_q.requires_grad())
          for (Index r = 0; r < d_qk; ++r)
            for (Index t = 0; t < tlen; ++t) h.enc.r_q.grad()[r * tlen + t] += drqT[t * d_qk + r];
        if (h.enc.r_k.requires_grad())
          for (Index r = 0; r < d_qk; ++r)
            for (Index t = 0; t < tlen; ++t) h.enc.r_k.grad()[r * tlen + t] += drkT[t * d_qk + r];
        if (h.enc.r_v.requires_grad())
          for (Index r = 0; r < d_v; ++r)
            for (Index t = 0; t < tlen; ++t) h.enc.r_v.grad()[r * tlen + t] += drvT[t * d_v + r];
      }

      // projection backward: dW += dZ x^T, dx += W^T dZ
      for (Index n = 0; n < N; ++n) {
        ConstMatMap<S> xn(x.data() + n * C * plane, C, plane);
        ConstMatMap<S> dqn(dqf.data() + n * d_qk * plane, d_qk, plane);
        ConstMatMap<S> dkn(dkf.data() + n * d_qk * plane, d_qk, plane);
        ConstMatMap<S> dvn(dvf.data() + n * d_v * plane, d_v, plane);
        if (h.w_q.requires_grad())
          MatMap<S>(h.w_q.grad(), d_qk, C).noalias() += dqn * xn.transpose();
        if (h.w_k.requires_grad())
          MatMap<S>(h.w_k.grad(), d_qk, C).noalias() += dkn * xn.transpose();
        if (h.w_v.requires_grad())
          MatMap<S>(h.w_v.grad(), d_v, C).noalias() += dvn * xn.transpose();
        if (x.requires_grad()) {
          MatMap<S> dxn(x.grad() + n * C * plane, C, plane);
          dxn.noalias() += ConstMatMap<S>(h.w_q.data(), d_qk, C).transpose() * dqn;
          dxn.noalias() += ConstMatMap<S>(h.w_k.data(), d_qk, C).transpose() * dkn;
          dxn.noalias() += ConstMatMap<S>(h.w_v.data(), d_v, C).transpose() * dvn;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// Gated axial attention along one axis for a single head. The softmax runs
// over the centered, border-truncated window of width `span`; the content
// logits carry the 1/sqrt(d_k) scaling while the positional terms do not.
template <typename S>
Tensor<S> gated_axial_attention_1d(Tensor<S> x, const AxialHead<S>& head, Axis axis,
                                   Index span, Tape<S>* tape) {
  if (span < 1) throw ConfigError("attention span must be >= 1, got " + std::to_string(span));
  if (axis == Axis::height) {
    Tensor<S> xt = permute_hw(x, tape);
    Tensor<S> yt = detail::axial_attention_width(xt, head, span, tape);
    return permute_hw(yt, tape);
  }
  return detail::axial_attention_width(x, head, span, tape);
}

// ---------------------------------------------------------------------------
// multi-head wrapper: input channels are split evenly across heads, each
// head runs the 1d kernel with its own projections, gates, and encodings,
// and the head outputs are concatenated along channels.
// ---------------------------------------------------------------------------

template <typename S>
class MultiHeadAxialLayer {
 public:
  MultiHeadAxialLayer() = default;

  MultiHeadAxialLayer(Axis axis, Index span, Index head_count, Index c_in, Index c_out,
                      S gate_init, S enc_bound, RandomSource& rng)
      : axis_(axis), span_(span), c_in_(c_in), c_out_(c_out) {
    if (head_count < 1) throw ConfigError("head count must be >= 1");
    if (c_in % head_count != 0 || c_out % head_count != 0)
      throw ConfigError("channels " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                        " not divisible by " + std::to_string(head_count) + " heads");
    if (span < 1) throw ConfigError("attention span must be >= 1");
    const Index cg = c_in / head_count;
    const Index d = c_out / head_count;  // per-head key/query and value width
    heads_.reserve(static_cast<std::size_t>(head_count));
    for (Index h = 0; h < head_count; ++h)
      heads_.push_back(AxialHead<S>::make(cg, d, d, span, gate_init, enc_bound, rng));
  }

  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    if (x.dim(1) != c_in_)
      throw DimensionError("multi-head layer expects " + std::to_string(c_in_) +
                           " channels, got " + shape_str(x.shape()));
    if (heads_.size() == 1) return gated_axial_attention_1d(x, heads_[0], axis_, span_, tape);
    const Index cg = c_in_ / static_cast<Index>(heads_.size());
    std::vector<Tensor<S>> outs;
    outs.reserve(heads_.size());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      Tensor<S> xh = slice_channels(x, static_cast<Index>(h) * cg,
                                    (static_cast<Index>(h) + 1) * cg, tape);
      outs.push_back(gated_axial_attention_1d(xh, heads_[h], axis_, span_, tape));
    }
    return concat_channels(outs, tape);
  }

  void set_gates_trainable(bool v) {
    for (auto& h : heads_) h.gates.set_trainable(v);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>&) {
    for (std::size_t h = 0; h < heads_.size(); ++h)
      heads_[h].collect(prefix + ".head" + std::to_string(h), params);
  }

  const std::vector<AxialHead<S>>& heads() const { return heads_; }
  std::vector<AxialHead<S>>& heads() { return heads_; }
  Axis axis() const { return axis_; }
  Index span() const { return span_; }

 private:
  std::vector<AxialHead<S>> heads_;
  Axis axis_ = Axis::width;
  Index span_ = 0, c_in_ = 0, c_out_ = 0;
};

// ---------------------------------------------------------------------------
// encoder / decoder blocks
// ---------------------------------------------------------------------------

// 1x1 conv -> BN -> ReLU -> height attention -> width attention -> 1x1 conv
// -> BN -> ReLU, added to a residual path. An optional stride-2 reduction is
// applied identically to both paths (on the first conv and the shortcut).
template <typename S>
class AxialEncoderBlock {
 public:
  struct Spec {
    Index c_in = 0, c_out = 0;
    Index span_h = 1, span_w = 1;
    Index heads = 1;
    Index stride = 1;
    S gate_init = static_cast<S>(0.1);
    S enc_bound = static_cast<S>(0.1);
  };

  AxialEncoderBlock() = default;

  AxialEncoderBlock(const Spec& spec, RandomSource& rng) : spec_(spec) {
    if (spec.stride != 1 && spec.stride != 2)
      throw ConfigError("encoder block stride must be 1 or 2");
    conv_in_ = Conv2dLayer<S>::make(spec.c_in, spec.c_out, 1, spec.stride, 0, false, rng);
    bn_in_ = BatchNorm2dLayer<S>::make(spec.c_out);
    attn_h_ = MultiHeadAxialLayer<S>(Axis::height, spec.span_h, spec.heads, spec.c_out,
                                     spec.c_out, spec.gate_init, spec.enc_bound, rng);
    attn_w_ = MultiHeadAxialLayer<S>(Axis::width, spec.span_w, spec.heads, spec.c_out,
                                     spec.c_out, spec.gate_init, spec.enc_bound, rng);
    conv_out_ = Conv2dLayer<S>::make(spec.c_out, spec.c_out, 1, 1, 0, false, rng);
    bn_out_ = BatchNorm2dLayer<S>::make(spec.c_out);
    has_shortcut_ = spec.c_in != spec.c_out || spec.stride != 1;
    if (has_shortcut_)
      shortcut_ = Conv2dLayer<S>::make(spec.c_in, spec.c_out, 1, spec.stride, 0, true, rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    Tensor<S> h = relu(bn_in_.forward(conv_in_.forward(x, tape), training, tape), tape);
    h = attn_h_.forward(h, tape);
    h = attn_w_.forward(h, tape);
    h = relu(bn_out_.forward(conv_out_.forward(h, tape), training, tape), tape);
    Tensor<S> res = has_shortcut_ ? shortcut_.forward(x, tape) : x;
    return add(res, h, tape);
  }

  void set_gates_trainable(bool v) {
    attn_h_.set_gates_trainable(v);
    attn_w_.set_gates_trainable(v);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    conv_in_.collect(prefix + ".conv_in", params, buffers);
    bn_in_.collect(prefix + ".bn_in", params, buffers);
    attn_h_.collect(prefix + ".attn_h", params, buffers);
    attn_w_.collect(prefix + ".attn_w", params, buffers);
    conv_out_.collect(prefix + ".conv_out", params, buffers);
    bn_out_.collect(prefix + ".bn_out", params, buffers);
    if (has_shortcut_) shortcut_.collect(prefix + ".shortcut", params, buffers);
  }

  const Spec& spec() const { return spec_; }
  MultiHeadAxialLayer<S>& attn_h() { return attn_h_; }
  MultiHeadAxialLayer<S>& attn_w() { return attn_w_; }

 private:
  Spec spec_;
  Conv2dLayer<S> conv_in_, conv_out_;
  BatchNorm2dLayer<S> bn_in_, bn_out_;
  MultiHeadAxialLayer<S> attn_h_, attn_w_;
  bool has_shortcut_ = false;
  Conv2dLayer<S> shortcut_;
};

// One decoder step: conv -> optional x2 bilinear upsampling -> ReLU.
template <typename S>
struct DecoderBlock {
  Conv2dLayer<S> conv;
  bool upsample = true;

  static DecoderBlock make(Index c_in, Index c_out, bool upsample, RandomSource& rng) {
    DecoderBlock block;
    block.conv = Conv2dLayer<S>::make(c_in, c_out, 3, 1, 1, true, rng);
    block.upsample = upsample;
    return block;
  }

  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    Tensor<S> h = conv.forward(x, tape);
    if (upsample) h = bilinear_resize(h, h.dim(2) * 2, h.dim(3) * 2, tape);
    return relu(h, tape);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    conv.collect(prefix + ".conv", params, buffers);
  }
};

}  // namespace pmt
