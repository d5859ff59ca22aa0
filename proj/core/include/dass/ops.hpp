#pragma once

#include <span>
#include <vector>

#include "dass/autograd.hpp"

/// Differentiable primitives. Image tensors are NCHW, feature matrices are
/// [batch, features]. Every primitive raises ShapeError naming itself and the
/// offending shapes when its inputs are incompatible.
namespace dass::ops {

Variable add(const Variable& a, const Variable& b);
/// Elementwise sum of one or more same-shape inputs.
Variable add_n(const std::vector<Variable>& xs);
Variable mul(const Variable& a, const Variable& b);
Variable scale(const Variable& x, float factor);
/// Sum of all elements, as a scalar.
Variable sum(const Variable& x);
Variable relu(const Variable& x);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// x: [N, C, H, W]; weight: [O, C / groups, KH, KW]. No bias.
Variable conv2d(const Variable& x, const Variable& weight, const Conv2dOptions& options = {});

/// x: [N, F]; weight: [O, F]; bias: [O] or undefined.
Variable linear(const Variable& x, const Variable& weight, const Variable& bias = {});

/// Per-channel normalization of an NCHW tensor. `gamma`/`beta` may be
/// undefined (non-affine). Training mode normalizes with batch statistics and
/// folds them into the running buffers with the given momentum; evaluation
/// mode normalizes with the running buffers.
Variable batch_norm(const Variable& x, const Variable& gamma, const Variable& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);

Variable max_pool2d(const Variable& x, int kernel, int stride, int padding);
/// Padding cells are excluded from the average.
Variable avg_pool2d(const Variable& x, int kernel, int stride, int padding);
/// [N, C, H, W] -> [N, C].
Variable global_avg_pool(const Variable& x);

/// Softmax over a rank-1 tensor.
Variable softmax(const Variable& logits);
/// Mean cross-entropy of [N, K] logits against integer labels in [0, K).
Variable cross_entropy(const Variable& logits, std::span<const int> labels);

/// Concatenation of NCHW tensors along the channel axis.
Variable concat_channels(const std::vector<Variable>& xs);

/// sum_i weights[i] * xs[i]; weights is rank-1 with one entry per input.
Variable mix(const Variable& weights, const std::vector<Variable>& xs);

/// out[n, c, i, j] = x[n, c, i + 1, j + 1], zero where the source is out of
/// bounds. Used by the factorized spatial reduction.
Variable shift_crop(const Variable& x);

/// Output size of a sliding window along one axis.
int64_t window_out(int64_t in, int kernel, int stride, int padding, int dilation = 1);

}  // namespace dass::ops
