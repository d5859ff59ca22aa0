#include "dass/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dass/error.hpp"

namespace dass {

const char* to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::kDense:
      return "dense";
    case ForwardMode::kScoreScaled:
      return "score-scaled";
    case ForwardMode::kMasked:
      return "masked";
  }
  return "?";
}

SparseParam SparseParam::from_weights(Tensor theta) {
  SparseParam p;
  const Shape shape = theta.shape();
  p.k = theta.numel();
  p.theta = Variable(std::move(theta), true);
  p.scores = Variable(Tensor(shape, 1.0f), false);
  p.mask = Variable(Tensor(shape, 1.0f), false);
  return p;
}

int64_t SparseParam::popcount() const {
  int64_t n = 0;
  for (float v : mask.value().values()) n += v != 0.0f;
  return n;
}

Variable SparseParam::effective_weight(ForwardMode mode) const {
  switch (mode) {
    case ForwardMode::kDense:
      return theta;
    case ForwardMode::kScoreScaled:
      return ops::mul(theta, scores);
    case ForwardMode::kMasked:
      return ops::mul(theta, mask);
  }
  throw ConfigError("unknown forward mode");
}

Tensor SparseParam::masked_weight() const {
  Tensor w = theta.value();
  const float* m = mask.value().data();
  for (int64_t i = 0; i < w.numel(); ++i) w[i] *= m[i];
  return w;
}

Tensor init_scores(const Tensor& theta_pre) {
  if (!theta_pre.defined()) throw ConfigError("init_scores: empty weight tensor");
  float max_abs = 0.0f;
  for (float v : theta_pre.values()) max_abs = std::max(max_abs, std::fabs(v));
  if (!(max_abs > 0.0f)) throw NumericError("init_scores: all-zero weights give an undefined normalization");
  Tensor s = theta_pre;
  for (float& v : s.values()) v /= max_abs;
  return s;
}

Tensor binarize_topk(const Tensor& scores, int64_t k) {
  const int64_t n = scores.numel();
  if (k < 0 || k > n) {
    throw ConfigError("binarize_topk: k=" + std::to_string(k) + " outside [0, " + std::to_string(n) + "]");
  }
  Tensor mask(scores.shape(), 0.0f);
  if (k == 0) return mask;
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  const float* s = scores.data();
  auto before = [s](int64_t a, int64_t b) {
    const float fa = std::fabs(s[a]), fb = std::fabs(s[b]);
    return fa > fb || (fa == fb && a < b);
  };
  if (k < n) std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), before);
  for (int64_t i = 0; i < k; ++i) mask[idx[static_cast<size_t>(i)]] = 1.0f;
  return mask;
}

int64_t layer_k_from_ratio(int64_t numel, double pruning_ratio) {
  if (!(pruning_ratio >= 0.0 && pruning_ratio <= 1.0)) {
    throw ConfigError("pruning ratio " + std::to_string(pruning_ratio) + " outside [0, 1]");
  }
  const auto k = static_cast<int64_t>(std::llround(static_cast<double>(numel) * (1.0 - pruning_ratio)));
  return std::clamp<int64_t>(k, 0, numel);
}

Variable sparse_conv2d(const Variable& x, const SparseParam& p, const ops::Conv2dOptions& options, ForwardMode mode) {
  return ops::conv2d(x, p.effective_weight(mode), options);
}

Variable sparse_linear(const Variable& x, const SparseParam& p, const Variable& bias, ForwardMode mode) {
  return ops::linear(x, p.effective_weight(mode), bias);
}

}  // namespace dass
