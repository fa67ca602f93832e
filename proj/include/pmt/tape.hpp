#pragma once

#include <functional>
#include <vector>

#include "pmt/common.hpp"
#include "pmt/tensor.hpp"

namespace pmt {

// Reverse-mode tape. Forward operations append one node each in execution
// order, so the list is topologically sorted by construction; backward()
// replays it once, in reverse. A tape is rebuilt per forward pass and is
// confined to a single training step on a single thread.
template <typename Scalar>
class Tape {
 public:
  void record(const char* op, std::function<void()> step) {
    nodes_.push_back({op, std::move(step)});
  }

  Index size() const { return static_cast<Index>(nodes_.size()); }
  const char* op_name(Index i) const { return nodes_[static_cast<std::size_t>(i)].op; }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Tensor<Scalar> loss) {
    if (loss.numel() != 1)
      throw ContractError("non-scalar-loss",
                          "backward expects a scalar, got " + shape_str(loss.shape()));
    loss.grad()[0] += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->step();
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op;
    std::function<void()> step;
  };
  std::vector<Node> nodes_;
};

// True when an operation applied to these inputs must be recorded.
template <typename Scalar>
inline bool tracking(const Tape<Scalar>* tape, std::initializer_list<const Tensor<Scalar>*> ins) {
  if (!tape) return false;
  for (const Tensor<Scalar>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace pmt
