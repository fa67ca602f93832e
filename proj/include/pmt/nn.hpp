#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pmt/ops.hpp"
#include "pmt/rng.hpp"

namespace pmt {

template <typename S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

namespace init {

// Kaiming-style uniform for convolutions feeding a ReLU.
template <typename S>
void conv_weight(Tensor<S>& w, Index fan_in, RandomSource& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  rng.fill_uniform(w, static_cast<S>(-bound), static_cast<S>(bound));
}

// Plain uniform for linear projections (attention q/k/v).
template <typename S>
void projection_weight(Tensor<S>& w, Index fan_in, RandomSource& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  rng.fill_uniform(w, static_cast<S>(-bound), static_cast<S>(bound));
}

}  // namespace init

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight;  // [Co, C, kh, kw]
  Tensor<S> bias;    // [Co], or empty when the conv feeds a batchnorm
  Index stride = 1;
  Index padding = 0;

  static Conv2dLayer make(Index c_in, Index c_out, Index kernel, Index stride, Index padding,
                          bool with_bias, RandomSource& rng) {
    Conv2dLayer layer;
    layer.weight = Tensor<S>({c_out, c_in, kernel, kernel});
    init::conv_weight(layer.weight, c_in * kernel * kernel, rng);
    layer.weight.set_requires_grad(true);
    if (with_bias) {
      layer.bias = Tensor<S>({c_out});
      layer.bias.set_requires_grad(true);
    }
    layer.stride = stride;
    layer.padding = padding;
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
    return conv2d(x, weight, bias, stride, padding, tape);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>&) {
    params.emplace_back(prefix + ".weight", weight);
    if (bias.numel()) params.emplace_back(prefix + ".bias", bias);
  }
};

template <typename S>
struct BatchNorm2dLayer {
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S momentum = static_cast<S>(0.1);
  S eps = static_cast<S>(1e-5);

  static BatchNorm2dLayer make(Index channels) {
    BatchNorm2dLayer layer;
    layer.gamma = Tensor<S>::ones({channels});
    layer.beta = Tensor<S>::zeros({channels});
    layer.gamma.set_requires_grad(true);
    layer.beta.set_requires_grad(true);
    layer.running_mean = Tensor<S>::zeros({channels});
    layer.running_var = Tensor<S>::ones({channels});
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps, tape);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    params.emplace_back(prefix + ".gamma", gamma);
    params.emplace_back(prefix + ".beta", beta);
    buffers.emplace_back(prefix + ".running_mean", running_mean);
    buffers.emplace_back(prefix + ".running_var", running_var);
  }
};

// conv -> batchnorm -> ReLU, the basic feature-extraction unit.
template <typename S>
struct ConvBnRelu {
  Conv2dLayer<S> conv;
  BatchNorm2dLayer<S> bn;

  static ConvBnRelu make(Index c_in, Index c_out, Index kernel, Index stride, Index padding,
                         RandomSource& rng) {
    ConvBnRelu unit;
    unit.conv = Conv2dLayer<S>::make(c_in, c_out, kernel, stride, padding, /*with_bias=*/false, rng);
    unit.bn = BatchNorm2dLayer<S>::make(c_out);
    return unit;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
    return relu(bn.forward(conv.forward(x, tape), training, tape), tape);
  }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) {
    conv.collect(prefix + ".conv", params, buffers);
    bn.collect(prefix + ".bn", params, buffers);
  }
};

}  // namespace pmt
