#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pmt/common.hpp"
#include "pmt/tape.hpp"
#include "pmt/tensor.hpp"

namespace pmt {

struct FiniteDiffOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  Index coord_stride = 1;  // >1 checks a strided subset of coordinates
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  bool pass = false;
  Index coords_checked = 0;
  std::string worst_param;
  Index worst_coord = -1;
};

// Central differences (f(t+h) - f(t-h)) / 2h per coordinate against the
// taped backward pass. `forward` is invoked as forward(Tape<S>*) and must
// return a scalar tensor; it is called with nullptr for the probing
// evaluations. Relative error is |a-b| / max(|a|, |b|, 1e-8).
template <typename S, typename Fn>
FiniteDiffReport finite_difference_check(Fn&& forward,
                                         std::vector<std::pair<std::string, Tensor<S>>> params,
                                         const FiniteDiffOptions& opt = {}) {
  if (!(opt.step > 0)) throw ConfigError("finite_difference_check step must be > 0");

  // Two plain evaluations must agree bit-for-bit or the check is meaningless.
  {
    Tensor<S> a = forward(static_cast<Tape<S>*>(nullptr));
    Tensor<S> b = forward(static_cast<Tape<S>*>(nullptr));
    if (!a.bit_equal(b))
      throw CheckError("forward function is not deterministic; finite differences are invalid");
  }

  for (auto& [name, p] : params) p.zero_grad();
  Tape<S> tape;
  Tensor<S> loss = forward(&tape);
  tape.backward(loss);

  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    analytic.emplace_back(p.grad(), p.grad() + p.numel());
  }

  FiniteDiffReport report;
  const S h = static_cast<S>(opt.step);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<S>& p = params[pi].second;
    for (Index i = 0; i < p.numel(); i += opt.coord_stride) {
      const S saved = p.data()[i];
      p.data()[i] = saved + h;
      const double f_plus = static_cast<double>(forward(static_cast<Tape<S>*>(nullptr)).data()[0]);
      p.data()[i] = saved - h;
      const double f_minus = static_cast<double>(forward(static_cast<Tape<S>*>(nullptr)).data()[0]);
      p.data()[i] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
      const double exact = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
      const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-8});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = params[pi].first;
        report.worst_coord = i;
      }
    }
  }
  report.pass = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace pmt
