#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmt/gradcheck.hpp"
#include "pmt/model.hpp"
#include "pmt/train.hpp"

namespace pmt {

// The standard 64-bit gradient-verification battery: one gated axial encoder
// block, one attention-gate fusion unit, and the full deep-supervised loss on
// a 16x16 desk-scale model. Shared by the CLI gradcheck command and the
// acceptance suite.

struct GradCheckCase {
  std::string name;
  double tolerance = 0.0;
  FiniteDiffReport report;
};

inline GradCheckCase gradcheck_encoder_block(std::uint64_t seed, double tolerance) {
  RandomSource rng(seed);
  typename AxialEncoderBlock<double>::Spec spec;
  spec.c_in = 4;
  spec.c_out = 4;
  spec.span_h = 3;
  spec.span_w = 3;
  spec.heads = 2;
  spec.stride = 1;
  AxialEncoderBlock<double> block(spec, rng);
  Tensor<double> x({1, 4, 6, 6});
  rng.fill_uniform(x, -1.0, 1.0);
  x.set_requires_grad(true);

  NamedTensors<double> params, buffers;
  block.collect("block", params, buffers);
  params.emplace_back("input", x);

  FiniteDiffOptions opt;
  opt.tolerance = tolerance;
  GradCheckCase c{"encoder-block", tolerance, {}};
  c.report = finite_difference_check<double>(
      [&](Tape<double>* tape) {
        Tensor<double> y = block.forward(x, /*training=*/true, tape);
        return sum(mul(y, y, tape), tape);
      },
      params, opt);
  return c;
}

inline GradCheckCase gradcheck_fusion_unit(std::uint64_t seed, double tolerance) {
  RandomSource rng(seed);
  AttentionGateFusion<double> fusion(4, 6, 2, 4, rng);
  Tensor<double> g({1, 4, 6, 6}), x({1, 6, 6, 6});
  rng.fill_uniform(g, -1.0, 1.0);
  rng.fill_uniform(x, -1.0, 1.0);
  g.set_requires_grad(true);
  x.set_requires_grad(true);

  NamedTensors<double> params, buffers;
  fusion.collect("fusion", params, buffers);
  params.emplace_back("gate_signal", g);
  params.emplace_back("stream", x);

  FiniteDiffOptions opt;
  opt.tolerance = tolerance;
  GradCheckCase c{"fusion-unit", tolerance, {}};
  c.report = finite_difference_check<double>(
      [&](Tape<double>* tape) {
        Tensor<double> y = fusion.forward(g, x, tape).fused;
        return sum(mul(y, y, tape), tape);
      },
      params, opt);
  return c;
}

inline PMTransConfig desk_scale_config(std::uint64_t seed) {
  PMTransConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.channels = 1;
  cfg.base_channels = 2;
  cfg.heads = 1;
  cfg.seed = seed;
  return cfg;
}

inline GradCheckCase gradcheck_full_model(std::uint64_t seed, double tolerance) {
  PMTransModel<double> model(desk_scale_config(seed));
  RandomSource rng(seed + 1);
  Tensor<double> x({1, 1, 16, 16});
  rng.fill_uniform(x, 0.0, 1.0);
  Tensor<double> mask({1, 1, 16, 16});
  for (Index i = 0; i < mask.numel(); ++i) mask.data()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;

  FiniteDiffOptions opt;
  opt.tolerance = tolerance;
  GradCheckCase c{"full-model-loss", tolerance, {}};
  c.report = finite_difference_check<double>(
      [&](Tape<double>* tape) {
        auto out = model.forward(x, /*training=*/true, tape);
        return total_supervised_loss<double>(out, mask, model.config().w_full,
                                             model.config().w_half, model.config().w_quarter,
                                             tape);
      },
      model.named_parameters(), opt);
  return c;
}

inline std::vector<GradCheckCase> run_gradient_battery(std::uint64_t seed, double tol_unit = 1e-4,
                                                       double tol_model = 1e-3) {
  std::vector<GradCheckCase> cases;
  cases.push_back(gradcheck_encoder_block(seed, tol_unit));
  cases.push_back(gradcheck_fusion_unit(seed, tol_unit));
  cases.push_back(gradcheck_full_model(seed, tol_model));
  return cases;
}

}  // namespace pmt
