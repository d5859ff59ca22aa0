#include "dass/autograd.hpp"

#include "dass/error.hpp"

namespace dass {
namespace {
thread_local Tape* g_active_tape = nullptr;
}

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Variable::accumulate_grad(const Tensor& g) {
  if (!node_->requires_grad) return;
  if (!g.same_shape(node_->value)) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(node_->value.shape()));
  }
  if (!node_->grad.defined()) {
    node_->grad = g;
    return;
  }
  float* dst = node_->grad.data();
  const float* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(const Variable& loss) {
  if (consumed_) throw ConfigError("backward called twice on the same tape");
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.on_tape(*this)) throw ConfigError("backward: loss was not recorded on this tape");
  consumed_ = true;
  loss.node()->grad = Tensor(loss.shape(), 1.0f);
  for (auto it = backward_fns_.rbegin(); it != backward_fns_.rend(); ++it) (*it)();
  backward_fns_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace detail {

bool should_record(std::initializer_list<const Variable*> inputs) {
  if (!g_active_tape) return false;
  for (const Variable* v : inputs) {
    if (v && v->defined() && v->requires_grad()) return true;
  }
  return false;
}

bool should_record(const std::vector<Variable>& inputs) {
  if (!g_active_tape) return false;
  for (const Variable& v : inputs) {
    if (v.defined() && v.requires_grad()) return true;
  }
  return false;
}

Variable make_result(Tensor value, bool record) {
  Variable out(std::move(value), record);
  if (record) out.node()->tape = g_active_tape;
  return out;
}

}  // namespace detail
}  // namespace dass
