#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dass/tensor.hpp"

namespace dass {

class Tape;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // undefined until the first accumulation
  bool requires_grad = false;
  const Tape* tape = nullptr;  // set for results recorded on a tape
};
}  // namespace detail

/// Shared handle to a value that may participate in reverse-mode
/// differentiation. Copies alias the same node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Mutable access for optimizers and checkpoint loading; never call while
  /// a tape that references this variable is alive.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.defined(); }
  const Tensor& grad() const { return node_->grad; }
  void clear_grad() { node_->grad = Tensor(); }
  void accumulate_grad(const Tensor& g);

  /// True when this variable is the recorded result of an op on `tape`.
  bool on_tape(const Tape& tape) const { return node_ && node_->tape == &tape; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records backward closures in forward (topological) order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { backward_fns_.push_back(std::move(backward_fn)); }
  size_t size() const { return backward_fns_.size(); }
  bool consumed() const { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every closure once in reverse order.
  /// Throws if `loss` is not a scalar recorded on this tape, or if the tape
  /// was already consumed.
  void backward(const Variable& loss);

 private:
  std::vector<std::function<void()>> backward_fns_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for ops created on this thread until
/// the scope ends. Without an active tape ops run in inference mode.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

namespace detail {
/// True if an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Variable*> inputs);
bool should_record(const std::vector<Variable>& inputs);
/// Wraps `value` in a result variable attached to the active tape.
Variable make_result(Tensor value, bool record);
}  // namespace detail

}  // namespace dass
