#pragma once

#include <cstdint>

#include "dass/autograd.hpp"
#include "dass/ops.hpp"

namespace dass {

/// How a sparse layer turns its weights into the tensor it convolves with.
enum class ForwardMode {
  kDense,        // theta
  kScoreScaled,  // theta * scores, differentiable in the scores
  kMasked,       // theta * mask
};

const char* to_string(ForwardMode mode);

/// A prunable weight tensor: weights, one floating pruning score per weight,
/// and a binary mask, all of identical shape. `k` is the number of weights the
/// mask retains after binarization.
struct SparseParam {
  Variable theta;
  Variable scores;
  Variable mask;  // never requires grad
  int64_t k = 0;

  /// Wraps `theta` with unit scores, an all-ones mask and k = numel.
  static SparseParam from_weights(Tensor theta);

  int64_t numel() const { return theta.value().numel(); }
  int64_t popcount() const;
  Variable effective_weight(ForwardMode mode) const;
  /// theta * mask, outside of any tape.
  Tensor masked_weight() const;
};

/// scores = theta_pre / max|theta_pre|. Throws NumericError when theta_pre is
/// all zeros.
Tensor init_scores(const Tensor& theta_pre);

/// Mask with ones at the k largest |scores|; ties go to the lower flat index.
Tensor binarize_topk(const Tensor& scores, int64_t k);

/// round(numel * (1 - ratio)) clamped to [0, numel].
int64_t layer_k_from_ratio(int64_t numel, double pruning_ratio);

/// Convolution with the layer's effective weight.
Variable sparse_conv2d(const Variable& x, const SparseParam& p, const ops::Conv2dOptions& options, ForwardMode mode);

/// Fully connected layer with the layer's effective weight. The bias is
/// never masked.
Variable sparse_linear(const Variable& x, const SparseParam& p, const Variable& bias, ForwardMode mode);

}  // namespace dass
