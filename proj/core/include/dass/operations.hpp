#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dass/rng.hpp"
#include "dass/sparse.hpp"

namespace dass {

/// Candidate operations of the search space, in their canonical order.
enum class OpKind {
  kSepConv3x3,
  kSepConv5x5,
  kDilConv3x3,
  kDilConv5x5,
  kMaxPool3x3,
  kAvgPool3x3,
  kSkipConnect,
  kZero,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);
bool op_has_weights(OpKind kind);

/// Ordered candidate list; alpha index i refers to ops[i].
struct OperationSet {
  std::vector<OpKind> ops;

  /// The seven sparse operations, optionally followed by the zero op.
  static OperationSet standard(bool include_zero = false);
  size_t size() const { return ops.size(); }
  std::optional<size_t> index_of(OpKind kind) const;
};

enum class SparseOpKind { kSeparableConv, kDilatedConv, kLinear };

/// Static description of a weight-bearing sparse operation.
struct SparseOpConfig {
  SparseOpKind kind = SparseOpKind::kSeparableConv;
  int kernel = 3;  // 0 for linear
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  int dilation = 1;
  ForwardMode mode = ForwardMode::kDense;
};

/// Config for a conv candidate; throws ConfigError for weightless kinds.
SparseOpConfig describe_sparse_op(OpKind kind, int channels, int stride, ForwardMode mode);

struct RunContext {
  ForwardMode mode = ForwardMode::kDense;
  bool training = true;
};

/// Named handles to every tensor a module owns.
struct ParamRegistry {
  struct SparseEntry {
    std::string name;
    SparseParam* param;
  };
  struct DenseEntry {
    std::string name;
    Variable* var;
  };
  struct BufferEntry {
    std::string name;
    Tensor* tensor;
  };
  std::vector<SparseEntry> sparse;
  std::vector<DenseEntry> dense;  // unmasked weights, biases, batch-norm affine
  std::vector<BufferEntry> buffers;  // batch-norm running statistics
};

class Module {
 public:
  virtual ~Module() = default;
  virtual Variable forward(const Variable& x, const RunContext& ctx) = 0;
  virtual void collect(ParamRegistry& reg, const std::string& prefix) = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d(int channels, bool affine);
  Variable forward(const Variable& x, const RunContext& ctx);
  void collect(ParamRegistry& reg, const std::string& prefix);

 private:
  Variable gamma_, beta_;
  Tensor running_mean_, running_var_;
};

/// Unmasked convolution.
class DenseConv {
 public:
  DenseConv(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng);
  Variable forward(const Variable& x) const { return ops::conv2d(x, weight_, options_); }
  void collect(ParamRegistry& reg, const std::string& prefix);

 private:
  Variable weight_;
  ops::Conv2dOptions options_;
};

/// Convolution whose weight is a SparseParam.
class SparseConv {
 public:
  SparseConv(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng);
  Variable forward(const Variable& x, ForwardMode mode) const { return sparse_conv2d(x, param_, options_, mode); }
  void collect(ParamRegistry& reg, const std::string& prefix);
  SparseParam& param() { return param_; }

 private:
  SparseParam param_;
  ops::Conv2dOptions options_;
};

class SparseLinear {
 public:
  SparseLinear(int in_features, int out_features, Rng& rng);
  Variable forward(const Variable& x, ForwardMode mode) const { return sparse_linear(x, param_, bias_, mode); }
  void collect(ParamRegistry& reg, const std::string& prefix);
  SparseParam& param() { return param_; }
  Variable& bias() { return bias_; }

 private:
  SparseParam param_;
  Variable bias_;
};

/// ReLU -> dense 1x1 conv -> BN, used to adapt cell inputs.
class ReluConvBn : public Module {
 public:
  ReluConvBn(int in_channels, int out_channels, Rng& rng);
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry& reg, const std::string& prefix) override;

 private:
  DenseConv conv_;
  BatchNorm2d bn_;
};

/// Halves spatial size with two offset strided 1x1 convs (dense).
class FactorizedReduce : public Module {
 public:
  FactorizedReduce(int in_channels, int out_channels, Rng& rng);
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry& reg, const std::string& prefix) override;

 private:
  DenseConv conv1_, conv2_;
  BatchNorm2d bn_;
};

/// ReLU -> depthwise -> pointwise -> BN, applied twice when `repeat` is set.
class SepConvOp : public Module {
 public:
  SepConvOp(int channels, int kernel, int stride, bool repeat, Rng& rng);
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry& reg, const std::string& prefix) override;

 private:
  struct Stage {
    SparseConv depthwise;
    SparseConv pointwise;
    BatchNorm2d bn;
  };
  std::vector<Stage> stages_;
};

/// ReLU -> dilated depthwise -> pointwise -> BN.
class DilConvOp : public Module {
 public:
  DilConvOp(int channels, int kernel, int stride, Rng& rng);
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry& reg, const std::string& prefix) override;

 private:
  SparseConv depthwise_;
  SparseConv pointwise_;
  BatchNorm2d bn_;
};

class PoolOp : public Module {
 public:
  PoolOp(bool max, int stride) : max_(max), stride_(stride) {}
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry&, const std::string&) override {}

 private:
  bool max_;
  int stride_;
};

class IdentityOp : public Module {
 public:
  Variable forward(const Variable& x, const RunContext&) override { return x; }
  void collect(ParamRegistry&, const std::string&) override {}
};

class ZeroOp : public Module {
 public:
  explicit ZeroOp(int stride) : stride_(stride) {}
  Variable forward(const Variable& x, const RunContext& ctx) override;
  void collect(ParamRegistry&, const std::string&) override {}

 private:
  int stride_;
};

/// Instantiates a candidate operation on `channels` channels.
std::unique_ptr<Module> make_operation(OpKind kind, int channels, int stride, bool double_sep_conv, Rng& rng);

}  // namespace dass
