#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmt/attention.hpp"
#include "pmt/nn.hpp"

namespace pmt {

// Per-branch structure constants: working scale (as a divisor of the input
// resolution) and encoder depth. The attention span is the same for all
// three branches, expressed in each branch's own grid.
struct BranchSpec {
  Index scale_div;  // 1, 2, or 4
  Index depth;      // encoder block count
};

inline constexpr BranchSpec kShortRange{1, 5};
inline constexpr BranchSpec kMidRange{2, 4};
inline constexpr BranchSpec kLongRange{4, 3};

struct PMTransConfig {
  Index height = 64;
  Index width = 64;
  Index channels = 1;
  Index base_channels = 16;
  Index heads = 4;
  std::uint64_t seed = 1;
  bool fusion_swap_gate = false;  // when true the CNN stream gates the transformer stream
  double gate_init = 0.1;
  double enc_init_bound = 0.1;
  // deep-supervision weights for the full / half / quarter heads
  double w_full = 1.0;
  double w_half = 0.5;
  double w_quarter = 0.25;

  Index span_h() const { return height / 4 > 0 ? height / 4 : 1; }
  Index span_w() const { return width / 4 > 0 ? width / 4 : 1; }

  void validate() const {
    if (height % 16 != 0 || width % 16 != 0)
      throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be divisible by 16");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (base_channels < 1 || base_channels % heads != 0)
      throw ConfigError("base channel width " + std::to_string(base_channels) +
                        " must be a positive multiple of heads=" + std::to_string(heads));
  }
};

// ---------------------------------------------------------------------------
// transformer branch: initial 3-conv block, encoder stack (first two blocks
// stride 2, channels doubling), mirrored conv/upsample decoder stack, and
// skip connections at matching resolutions
// ---------------------------------------------------------------------------

template <typename S>
class TransformerBranch {
 public:
  TransformerBranch() = default;

  TransformerBranch(Index c_in, Index c0, Index depth, Index span_h, Index span_w, Index heads,
                    S gate_init, S enc_bound, RandomSource& rng)
      : depth_(depth) {
    if (depth < 3) throw ConfigError("branch depth must be >= 3, got " + std::to_string(depth));
    init1_ = ConvBnRelu<S>::make(c_in, c0, 3, 1, 1, rng);
    init2_ = ConvBnRelu<S>::make(c0, c0, 3, 1, 1, rng);
    init3_ = ConvBnRelu<S>::make(c0, c0, 3, 1, 1, rng);
    using Spec = typename AxialEncoderBlock<S>::Spec;
    for (Index i = 0; i < depth; ++i) {
      Spec spec;
      spec.span_h = span_h;
      spec.span_w = span_w;
      spec.heads = heads;
      spec.gate_init = gate_init;
      spec.enc_bound = enc_bound;
      if (i == 0) {
        spec.c_in = c0;
        spec.c_out = 2 * c0;
        spec.stride = 2;
      } else if (i == 1) {
        spec.c_in = 2 * c0;
        spec.c_out = 4 * c0;
        spec.stride = 2;
      } else {
        spec.c_in = 4 * c0;
        spec.c_out = 4 * c0;
        spec.stride = 1;
      }
      encoders_.emplace_back(spec, rng);
    }
    for (Index i = 0; i < depth - 2; ++i)
      decoders_.push_back(DecoderBlock<S>::make(4 * c0, 4 * c0, /*upsample=*/false, rng));
    decoders_.push_back(DecoderBlock<S>::make(4 * c0, 2 * c0, /*upsample=*/true, rng));
    decoders_.push_back(DecoderBlock<S>::make(2 * c0, c0, /*upsample=*/true, rng));
  }

  // Output spatial size equals the branch input size; channel width is c0.
  Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    Tensor<S> e0 = init3_.forward(init2_.forward(init1_.forward(x, training, tape), training, tape),
                                  training, tape);
    Tensor<S> e1 = encoders_[0].forward(e0, training, tape);
    Tensor<S> e2 = encoders_[1].forward(e1, training, tape);
    Tensor<S> h = e2;
    for (std::size_t i = 2; i < encoders_.size(); ++i) h = encoders_[i].forward(h, training, tape);
    std::size_t d = 0;
    for (; d + 2 < decoders_.size(); ++d) h = decoders_[d].forward(h, tape);
    h = add(h, e2, tape);
    h = decoders_[d++].forward(h, tape);
    h = add(h, e1, tape);
    h = decoders_[d++].forward(h, tape);
    h = add(h, e0, tape);
    return h;
  }

  void set_gates_trainable(bool v) {
    for (auto& e : encoders_) e.set_gates_trainable(v);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    init1_.collect(prefix + ".init1", params, buffers);
    init2_.collect(prefix + ".init2", params, buffers);
    init3_.collect(prefix + ".init3", params, buffers);
    for (std::size_t i = 0; i < encoders_.size(); ++i)
      encoders_[i].collect(prefix + ".enc" + std::to_string(i), params, buffers);
    for (std::size_t i = 0; i < decoders_.size(); ++i)
      decoders_[i].collect(prefix + ".dec" + std::to_string(i), params, buffers);
  }

  Index depth() const { return depth_; }
  std::vector<AxialEncoderBlock<S>>& encoders() { return encoders_; }

 private:
  Index depth_ = 0;
  ConvBnRelu<S> init1_, init2_, init3_;
  std::vector<AxialEncoderBlock<S>> encoders_;
  std::vector<DecoderBlock<S>> decoders_;
};

// ---------------------------------------------------------------------------
// CNN branch: three residual stages at scales 1, 1/2, 1/4
// ---------------------------------------------------------------------------

template <typename S>
class ResidualStage {
 public:
  ResidualStage() = default;

  ResidualStage(Index c_in, Index c_out, Index stride, RandomSource& rng) {
    conv1_ = Conv2dLayer<S>::make(c_in, c_out, 3, stride, 1, false, rng);
    bn1_ = BatchNorm2dLayer<S>::make(c_out);
    conv2_ = Conv2dLayer<S>::make(c_out, c_out, 3, 1, 1, false, rng);
    bn2_ = BatchNorm2dLayer<S>::make(c_out);
    has_shortcut_ = c_in != c_out || stride != 1;
    if (has_shortcut_) shortcut_ = Conv2dLayer<S>::make(c_in, c_out, 1, stride, 0, true, rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    Tensor<S> h = relu(bn1_.forward(conv1_.forward(x, tape), training, tape), tape);
    h = bn2_.forward(conv2_.forward(h, tape), training, tape);
    Tensor<S> res = has_shortcut_ ? shortcut_.forward(x, tape) : x;
    return relu(add(res, h, tape), tape);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    conv1_.collect(prefix + ".conv1", params, buffers);
    bn1_.collect(prefix + ".bn1", params, buffers);
    conv2_.collect(prefix + ".conv2", params, buffers);
    bn2_.collect(prefix + ".bn2", params, buffers);
    if (has_shortcut_) shortcut_.collect(prefix + ".shortcut", params, buffers);
  }

 private:
  Conv2dLayer<S> conv1_, conv2_;
  BatchNorm2dLayer<S> bn1_, bn2_;
  bool has_shortcut_ = false;
  Conv2dLayer<S> shortcut_;
};

template <typename S>
class CnnBranch {
 public:
  struct Maps {
    Tensor<S> full, half, quarter;
  };

  CnnBranch() = default;

  CnnBranch(Index c_in, Index c0, RandomSource& rng)
      : stage1_(c_in, c0, 1, rng), stage2_(c0, 2 * c0, 2, rng), stage3_(2 * c0, 4 * c0, 2, rng) {}

  Maps forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    Maps maps;
    maps.full = stage1_.forward(x, training, tape);
    maps.half = stage2_.forward(maps.full, training, tape);
    maps.quarter = stage3_.forward(maps.half, training, tape);
    return maps;
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    stage1_.collect(prefix + ".stage1", params, buffers);
    stage2_.collect(prefix + ".stage2", params, buffers);
    stage3_.collect(prefix + ".stage3", params, buffers);
  }

  ResidualStage<S>& stage(int i) { return i == 0 ? stage1_ : (i == 1 ? stage2_ : stage3_); }

 private:
  ResidualStage<S> stage1_, stage2_, stage3_;
};

// ---------------------------------------------------------------------------
// additive attention gate fusing one transformer map with one CNN map:
// alpha = sigmoid(psi(relu(Wg g + Wx x))), fused = conv1x1(concat(g, x*alpha))
// ---------------------------------------------------------------------------

template <typename S>
class AttentionGateFusion {
 public:
  AttentionGateFusion() = default;

  AttentionGateFusion(Index c_gate, Index c_stream, Index c_inter, Index c_out, RandomSource& rng) {
    w_g_ = Conv2dLayer<S>::make(c_gate, c_inter, 1, 1, 0, true, rng);
    w_x_ = Conv2dLayer<S>::make(c_stream, c_inter, 1, 1, 0, true, rng);
    psi_ = Conv2dLayer<S>::make(c_inter, 1, 1, 1, 0, true, rng);
    fuse_ = Conv2dLayer<S>::make(c_gate + c_stream, c_out, 1, 1, 0, true, rng);
  }

  struct Result {
    Tensor<S> fused;
    Tensor<S> alpha;  // [N,1,H,W], strictly inside (0,1)
  };

  Result forward(const Tensor<S>& gate_signal, const Tensor<S>& stream, Tape<S>* tape) {
    if (gate_signal.dim(2) != stream.dim(2) || gate_signal.dim(3) != stream.dim(3))
      throw DimensionError("fusion scale mismatch: " + shape_str(gate_signal.shape()) + " vs " +
                           shape_str(stream.shape()));
    Tensor<S> pre = relu(add(w_g_.forward(gate_signal, tape), w_x_.forward(stream, tape), tape), tape);
    Result r;
    r.alpha = sigmoid(psi_.forward(pre, tape), tape);
    Tensor<S> gated = mul_channel_broadcast(stream, r.alpha, tape);
    r.fused = relu(fuse_.forward(concat_channels(gate_signal, gated, tape), tape), tape);
    return r;
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    w_g_.collect(prefix + ".w_g", params, buffers);
    w_x_.collect(prefix + ".w_x", params, buffers);
    psi_.collect(prefix + ".psi", params, buffers);
    fuse_.collect(prefix + ".fuse", params, buffers);
  }

  Conv2dLayer<S>& psi() { return psi_; }

 private:
  Conv2dLayer<S> w_g_, w_x_, psi_, fuse_;
};

// ---------------------------------------------------------------------------
// the assembled four-branch model
// ---------------------------------------------------------------------------

template <typename S>
class PMTransModel {
 public:
  struct Outputs {
    Tensor<S> full;     // [N,1,H,W] logits
    Tensor<S> half;     // [N,1,H/2,W/2] logits, training mode only
    Tensor<S> quarter;  // [N,1,H/4,W/4] logits, training mode only
    bool has_aux = false;
  };

  explicit PMTransModel(const PMTransConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    RandomSource rng(cfg_.seed);
    const Index c0 = cfg_.base_channels;
    const Index span_h = cfg_.span_h(), span_w = cfg_.span_w();
    const S gate_init = static_cast<S>(cfg_.gate_init);
    const S enc_bound = static_cast<S>(cfg_.enc_init_bound);

    short_ = TransformerBranch<S>(cfg_.channels, c0, kShortRange.depth, span_h, span_w,
                                  cfg_.heads, gate_init, enc_bound, rng);
    mid_ = TransformerBranch<S>(cfg_.channels, c0, kMidRange.depth, span_h, span_w, cfg_.heads,
                                gate_init, enc_bound, rng);
    long_ = TransformerBranch<S>(cfg_.channels, c0, kLongRange.depth, span_h, span_w, cfg_.heads,
                                 gate_init, enc_bound, rng);
    cnn_ = CnnBranch<S>(cfg_.channels, c0, rng);

    const Index c_inter = c0 / 2 > 0 ? c0 / 2 : 1;
    const Index tf = c0;  // transformer map width at every scale
    const Index cnn_full = c0, cnn_half = 2 * c0, cnn_quarter = 4 * c0;
    auto make_fuse = [&](Index c_cnn) {
      return cfg_.fusion_swap_gate
                 ? AttentionGateFusion<S>(c_cnn, tf, c_inter, c0, rng)
                 : AttentionGateFusion<S>(tf, c_cnn, c_inter, c0, rng);
    };
    fuse_full_ = make_fuse(cnn_full);
    fuse_half_ = make_fuse(cnn_half);
    fuse_quarter_ = make_fuse(cnn_quarter);

    merge_half_ = Conv2dLayer<S>::make(c0, c0, 1, 1, 0, true, rng);
    merge_full_ = Conv2dLayer<S>::make(c0, c0, 1, 1, 0, true, rng);
    head_full_ = Conv2dLayer<S>::make(c0, 1, 1, 1, 0, true, rng);
    head_half_ = Conv2dLayer<S>::make(c0, 1, 1, 1, 0, true, rng);
    head_quarter_ = Conv2dLayer<S>::make(c0, 1, 1, 1, 0, true, rng);
  }

  Outputs forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    if (x.rank() != 4 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.height ||
        x.dim(3) != cfg_.width)
      throw DimensionError("model expects [N," + std::to_string(cfg_.channels) + "," +
                           std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                           "], got " + shape_str(x.shape()));
    const Index H = cfg_.height, W = cfg_.width;

    Tensor<S> x_half = bilinear_resize(x, H / 2, W / 2, tape);
    Tensor<S> x_quarter = bilinear_resize(x, H / 4, W / 4, tape);

    Tensor<S> t_full = short_.forward(x, training, tape);
    Tensor<S> t_half = mid_.forward(x_half, training, tape);
    Tensor<S> t_quarter = long_.forward(x_quarter, training, tape);
    typename CnnBranch<S>::Maps cnn = cnn_.forward(x, training, tape);

    auto fuse = [&](AttentionGateFusion<S>& unit, const Tensor<S>& t, const Tensor<S>& c) {
      return cfg_.fusion_swap_gate ? unit.forward(c, t, tape).fused : unit.forward(t, c, tape).fused;
    };

    Tensor<S> f_quarter = fuse(fuse_quarter_, t_quarter, cnn.quarter);
    Tensor<S> f_half = fuse(fuse_half_, t_half, cnn.half);
    Tensor<S> f_full = fuse(fuse_full_, t_full, cnn.full);

    Outputs out;
    if (training) {
      out.quarter = head_quarter_.forward(f_quarter, tape);
      out.has_aux = true;
    }
    Tensor<S> up_h = bilinear_resize(f_quarter, H / 2, W / 2, tape);
    Tensor<S> m_half = relu(add(merge_half_.forward(up_h, tape), f_half, tape), tape);
    if (training) out.half = head_half_.forward(m_half, tape);
    Tensor<S> up_f = bilinear_resize(m_half, H, W, tape);
    Tensor<S> m_full = relu(add(merge_full_.forward(up_f, tape), f_full, tape), tape);
    out.full = head_full_.forward(m_full, tape);
    return out;
  }

  void set_gates_trainable(bool v) {
    short_.set_gates_trainable(v);
    mid_.set_gates_trainable(v);
    long_.set_gates_trainable(v);
  }

  NamedTensors<S> named_parameters() {
    NamedTensors<S> params, buffers;
    collect(params, buffers);
    return params;
  }

  NamedTensors<S> named_buffers() {
    NamedTensors<S> params, buffers;
    collect(params, buffers);
    return buffers;
  }

  std::vector<Tensor<S>> parameters() {
    std::vector<Tensor<S>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  Index parameter_count() {
    Index n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  const PMTransConfig& config() const { return cfg_; }

  TransformerBranch<S>& short_branch() { return short_; }
  TransformerBranch<S>& mid_branch() { return mid_; }
  TransformerBranch<S>& long_branch() { return long_; }
  CnnBranch<S>& cnn_branch() { return cnn_; }
  AttentionGateFusion<S>& fusion_quarter() { return fuse_quarter_; }
  Conv2dLayer<S>& head_half() { return head_half_; }
  Conv2dLayer<S>& head_quarter() { return head_quarter_; }

 private:
  void collect(NamedTensors<S>& params, NamedTensors<S>& buffers) {
    short_.collect("short", params, buffers);
    mid_.collect("mid", params, buffers);
    long_.collect("long", params, buffers);
    cnn_.collect("cnn", params, buffers);
    fuse_full_.collect("fuse_full", params, buffers);
    fuse_half_.collect("fuse_half", params, buffers);
    fuse_quarter_.collect("fuse_quarter", params, buffers);
    NamedTensors<S> none;
    merge_half_.collect("merge_half", params, none);
    merge_full_.collect("merge_full", params, none);
    head_full_.collect("head_full", params, none);
    head_half_.collect("head_half", params, none);
    head_quarter_.collect("head_quarter", params, none);
  }

  PMTransConfig cfg_;
  TransformerBranch<S> short_, mid_, long_;
  CnnBranch<S> cnn_;
  AttentionGateFusion<S> fuse_full_, fuse_half_, fuse_quarter_;
  Conv2dLayer<S> merge_half_, merge_full_;
  Conv2dLayer<S> head_full_, head_half_, head_quarter_;
};

}  // namespace pmt
