#include "dass/operations.hpp"

#include <array>
#include <cmath>

#include "dass/error.hpp"

namespace dass {
namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 8> kOpNames{{
    {OpKind::kSepConv3x3, "sep_sparse_conv_3x3"},
    {OpKind::kSepConv5x5, "sep_sparse_conv_5x5"},
    {OpKind::kDilConv3x3, "dil_sparse_conv_3x3"},
    {OpKind::kDilConv5x5, "dil_sparse_conv_5x5"},
    {OpKind::kMaxPool3x3, "max_pool_3x3"},
    {OpKind::kAvgPool3x3, "avg_pool_3x3"},
    {OpKind::kSkipConnect, "skip_connect"},
    {OpKind::kZero, "none"},
}};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (float& v : t.values()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

void collect_sparse(ParamRegistry& reg, const std::string& name, SparseParam& p) { reg.sparse.push_back({name, &p}); }

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

bool op_has_weights(OpKind kind) {
  return kind == OpKind::kSepConv3x3 || kind == OpKind::kSepConv5x5 || kind == OpKind::kDilConv3x3 ||
         kind == OpKind::kDilConv5x5;
}

OperationSet OperationSet::standard(bool include_zero) {
  OperationSet set;
  set.ops = {OpKind::kSepConv3x3, OpKind::kSepConv5x5, OpKind::kDilConv3x3, OpKind::kDilConv5x5,
             OpKind::kMaxPool3x3, OpKind::kAvgPool3x3, OpKind::kSkipConnect};
  if (include_zero) set.ops.push_back(OpKind::kZero);
  return set;
}

std::optional<size_t> OperationSet::index_of(OpKind kind) const {
  for (size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] == kind) return i;
  }
  return std::nullopt;
}

SparseOpConfig describe_sparse_op(OpKind kind, int channels, int stride, ForwardMode mode) {
  SparseOpConfig cfg;
  cfg.in_channels = channels;
  cfg.out_channels = channels;
  cfg.stride = stride;
  cfg.mode = mode;
  switch (kind) {
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
      cfg.kind = SparseOpKind::kSeparableConv;
      cfg.kernel = kind == OpKind::kSepConv3x3 ? 3 : 5;
      return cfg;
    case OpKind::kDilConv3x3:
    case OpKind::kDilConv5x5:
      cfg.kind = SparseOpKind::kDilatedConv;
      cfg.kernel = kind == OpKind::kDilConv3x3 ? 3 : 5;
      cfg.dilation = 2;
      return cfg;
    default:
      throw ConfigError("operation " + std::string(op_name(kind)) + " has no sparse weights");
  }
}

BatchNorm2d::BatchNorm2d(int channels, bool affine)
    : running_mean_(Shape{channels}, 0.0f), running_var_(Shape{channels}, 1.0f) {
  if (affine) {
    gamma_ = Variable(Tensor(Shape{channels}, 1.0f), true);
    beta_ = Variable(Tensor(Shape{channels}, 0.0f), true);
  }
}

Variable BatchNorm2d::forward(const Variable& x, const RunContext& ctx) {
  return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, ctx.training);
}

void BatchNorm2d::collect(ParamRegistry& reg, const std::string& prefix) {
  if (gamma_.defined()) {
    reg.dense.push_back({prefix + ".gamma", &gamma_});
    reg.dense.push_back({prefix + ".beta", &beta_});
  }
  reg.buffers.push_back({prefix + ".running_mean", &running_mean_});
  reg.buffers.push_back({prefix + ".running_var", &running_var_});
}

DenseConv::DenseConv(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng)
    : options_(options) {
  const int cg = in_channels / options.groups;
  weight_ = Variable(uniform_init(Shape{out_channels, cg, kernel, kernel}, int64_t{cg} * kernel * kernel, rng), true);
}

void DenseConv::collect(ParamRegistry& reg, const std::string& prefix) { reg.dense.push_back({prefix + ".weight", &weight_}); }

SparseConv::SparseConv(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng)
    : options_(options) {
  const int cg = in_channels / options.groups;
  param_ = SparseParam::from_weights(
      uniform_init(Shape{out_channels, cg, kernel, kernel}, int64_t{cg} * kernel * kernel, rng));
}

void SparseConv::collect(ParamRegistry& reg, const std::string& prefix) { collect_sparse(reg, prefix + ".weight", param_); }

SparseLinear::SparseLinear(int in_features, int out_features, Rng& rng) {
  param_ = SparseParam::from_weights(uniform_init(Shape{out_features, in_features}, in_features, rng));
  bias_ = Variable(uniform_init(Shape{out_features}, in_features, rng), true);
}

void SparseLinear::collect(ParamRegistry& reg, const std::string& prefix) {
  collect_sparse(reg, prefix + ".weight", param_);
  reg.dense.push_back({prefix + ".bias", &bias_});
}

ReluConvBn::ReluConvBn(int in_channels, int out_channels, Rng& rng)
    : conv_(in_channels, out_channels, 1, {}, rng), bn_(out_channels, false) {}

Variable ReluConvBn::forward(const Variable& x, const RunContext& ctx) {
  return bn_.forward(conv_.forward(ops::relu(x)), ctx);
}

void ReluConvBn::collect(ParamRegistry& reg, const std::string& prefix) {
  conv_.collect(reg, prefix + ".conv");
  bn_.collect(reg, prefix + ".bn");
}

FactorizedReduce::FactorizedReduce(int in_channels, int out_channels, Rng& rng)
    : conv1_(in_channels, out_channels / 2, 1, {.stride = 2}, rng),
      conv2_(in_channels, out_channels - out_channels / 2, 1, {.stride = 2}, rng),
      bn_(out_channels, false) {}

Variable FactorizedReduce::forward(const Variable& x, const RunContext& ctx) {
  const Variable h = ops::relu(x);
  return bn_.forward(ops::concat_channels({conv1_.forward(h), conv2_.forward(ops::shift_crop(h))}), ctx);
}

void FactorizedReduce::collect(ParamRegistry& reg, const std::string& prefix) {
  conv1_.collect(reg, prefix + ".conv1");
  conv2_.collect(reg, prefix + ".conv2");
  bn_.collect(reg, prefix + ".bn");
}

SepConvOp::SepConvOp(int channels, int kernel, int stride, bool repeat, Rng& rng) {
  const int pad = kernel / 2;
  const int n_stages = repeat ? 2 : 1;
  stages_.reserve(static_cast<size_t>(n_stages));
  for (int i = 0; i < n_stages; ++i) {
    const int s = i == 0 ? stride : 1;
    stages_.push_back(Stage{
        SparseConv(channels, channels, kernel, {.stride = s, .padding = pad, .groups = channels}, rng),
        SparseConv(channels, channels, 1, {}, rng), BatchNorm2d(channels, false)});
  }
}

Variable SepConvOp::forward(const Variable& x, const RunContext& ctx) {
  Variable h = x;
  for (auto& st : stages_) {
    h = st.bn.forward(st.pointwise.forward(st.depthwise.forward(ops::relu(h), ctx.mode), ctx.mode), ctx);
  }
  return h;
}

void SepConvOp::collect(ParamRegistry& reg, const std::string& prefix) {
  for (size_t i = 0; i < stages_.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    stages_[i].depthwise.collect(reg, prefix + ".dw" + n);
    stages_[i].pointwise.collect(reg, prefix + ".pw" + n);
    stages_[i].bn.collect(reg, prefix + ".bn" + n);
  }
}

DilConvOp::DilConvOp(int channels, int kernel, int stride, Rng& rng)
    : depthwise_(channels, channels, kernel,
                 {.stride = stride, .padding = kernel - 1, .dilation = 2, .groups = channels}, rng),
      pointwise_(channels, channels, 1, {}, rng),
      bn_(channels, false) {}

Variable DilConvOp::forward(const Variable& x, const RunContext& ctx) {
  return bn_.forward(pointwise_.forward(depthwise_.forward(ops::relu(x), ctx.mode), ctx.mode), ctx);
}

void DilConvOp::collect(ParamRegistry& reg, const std::string& prefix) {
  depthwise_.collect(reg, prefix + ".dw");
  pointwise_.collect(reg, prefix + ".pw");
  bn_.collect(reg, prefix + ".bn");
}

Variable PoolOp::forward(const Variable& x, const RunContext&) {
  return max_ ? ops::max_pool2d(x, 3, stride_, 1) : ops::avg_pool2d(x, 3, stride_, 1);
}

Variable ZeroOp::forward(const Variable& x, const RunContext&) {
  const Shape& s = x.shape();
  if (stride_ == 1) return Variable(Tensor(s));
  return Variable(Tensor(Shape{s[0], s[1], ops::window_out(s[2], 1, stride_, 0), ops::window_out(s[3], 1, stride_, 0)}));
}

std::unique_ptr<Module> make_operation(OpKind kind, int channels, int stride, bool double_sep_conv, Rng& rng) {
  switch (kind) {
    case OpKind::kSepConv3x3:
      return std::make_unique<SepConvOp>(channels, 3, stride, double_sep_conv, rng);
    case OpKind::kSepConv5x5:
      return std::make_unique<SepConvOp>(channels, 5, stride, double_sep_conv, rng);
    case OpKind::kDilConv3x3:
      return std::make_unique<DilConvOp>(channels, 3, stride, rng);
    case OpKind::kDilConv5x5:
      return std::make_unique<DilConvOp>(channels, 5, stride, rng);
    case OpKind::kMaxPool3x3:
      return std::make_unique<PoolOp>(true, stride);
    case OpKind::kAvgPool3x3:
      return std::make_unique<PoolOp>(false, stride);
    case OpKind::kSkipConnect:
      if (stride == 1) return std::make_unique<IdentityOp>();
      return std::make_unique<FactorizedReduce>(channels, channels, rng);
    case OpKind::kZero:
      return std::make_unique<ZeroOp>(stride);
  }
  throw ConfigError("unknown operation kind");
}

}  // namespace dass
