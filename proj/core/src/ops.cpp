#include "dass/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dass/error.hpp"

namespace dass::ops {
namespace {

using NodePtr = std::shared_ptr<detail::Node>;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

void require_same(const Variable& a, const Variable& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Variable& x, size_t rank, const char* op, const char* layout) {
  require(x.shape().size() == rank, op,
          "expected " + std::string(layout) + " input, got shape " + shape_str(x.shape()));
}

// Accumulates g into node's gradient if it participates.
void push_grad(const NodePtr& node, const Tensor& g) {
  if (!node->requires_grad) return;
  if (!node->grad.defined()) {
    node->grad = g;
    return;
  }
  float* dst = node->grad.data();
  const float* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void push_grad(const NodePtr& node, Tensor&& g) {
  if (!node->requires_grad) return;
  if (!node->grad.defined()) {
    node->grad = std::move(g);
    return;
  }
  float* dst = node->grad.data();
  const float* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

// Range [lo, hi) of output positions whose input index o*stride - pad + offset lies in [0, in).
inline void valid_range(int64_t out, int64_t in, int stride, int pad, int64_t offset, int64_t& lo, int64_t& hi) {
  const int64_t shift = offset - pad;  // input = o * stride + shift
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const int64_t lim = in - shift;  // need o * stride < lim
  hi = lim <= 0 ? 0 : (lim + stride - 1) / stride;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
}

}  // namespace

int64_t window_out(int64_t in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Variable add(const Variable& a, const Variable& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  const float* pb = b.value().data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  const bool rec = detail::should_record({&a, &b});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o = res.node(), na = a.node(), nb = b.node()] {
      if (!o->grad.defined()) return;
      push_grad(na, o->grad);
      push_grad(nb, o->grad);
    });
  }
  return res;
}

Variable add_n(const std::vector<Variable>& xs) {
  require(!xs.empty(), "add_n", "needs at least one input");
  for (const auto& x : xs) require_same(xs.front(), x, "add_n");
  Tensor out = xs.front().value();
  float* po = out.data();
  for (size_t k = 1; k < xs.size(); ++k) {
    const float* px = xs[k].value().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] += px[i];
  }
  const bool rec = detail::should_record(xs);
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    std::vector<NodePtr> ins;
    for (const auto& x : xs) ins.push_back(x.node());
    active_tape()->record([o = res.node(), ins = std::move(ins)] {
      if (!o->grad.defined()) return;
      for (const auto& n : ins) push_grad(n, o->grad);
    });
  }
  return res;
}

Variable mul(const Variable& a, const Variable& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const float* pb = b.value().data();
  float* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  const bool rec = detail::should_record({&a, &b});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o = res.node(), na = a.node(), nb = b.node()] {
      if (!o->grad.defined()) return;
      const Tensor& g = o->grad;
      if (na->requires_grad) {
        Tensor ga = g;
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= nb->value[i];
        push_grad(na, std::move(ga));
      }
      if (nb->requires_grad) {
        Tensor gb = g;
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= na->value[i];
        push_grad(nb, std::move(gb));
      }
    });
  }
  return res;
}

Variable scale(const Variable& x, float factor) {
  Tensor out = x.value();
  for (float& v : out.values()) v *= factor;
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o = res.node(), nx = x.node(), factor] {
      if (!o->grad.defined()) return;
      Tensor g = o->grad;
      for (float& v : g.values()) v *= factor;
      push_grad(nx, std::move(g));
    });
  }
  return res;
}

Variable sum(const Variable& x) {
  double acc = 0.0;
  for (float v : x.value().values()) acc += v;
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(Tensor::scalar(static_cast<float>(acc)), rec);
  if (rec) {
    active_tape()->record([o = res.node(), nx = x.node()] {
      if (!o->grad.defined()) return;
      push_grad(nx, Tensor(nx->value.shape(), o->grad[0]));
    });
  }
  return res;
}

Variable relu(const Variable& x) {
  Tensor out = x.value();
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o = res.node(), nx = x.node()] {
      if (!o->grad.defined()) return;
      Tensor g = o->grad;
      const float* xv = nx->value.data();
      for (int64_t i = 0; i < g.numel(); ++i) {
        if (!(xv[i] > 0.0f)) g[i] = 0.0f;
      }
      push_grad(nx, std::move(g));
    });
  }
  return res;
}

Variable conv2d(const Variable& x, const Variable& weight, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d", "NCHW");
  require(weight.shape().size() == 4, "conv2d", "weight must be [O, C/groups, KH, KW], got " + shape_str(weight.shape()));
  require(opt.stride >= 1 && opt.dilation >= 1 && opt.groups >= 1 && opt.padding >= 0, "conv2d",
          "stride, dilation and groups must be positive");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t O = weight.shape()[0], Cg = weight.shape()[1], KH = weight.shape()[2], KW = weight.shape()[3];
  const int G = opt.groups;
  require(C % G == 0 && O % G == 0 && Cg == C / G, "conv2d",
          "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()) + " at groups=" +
              std::to_string(G));
  const int64_t Ho = window_out(H, static_cast<int>(KH), opt.stride, opt.padding, opt.dilation);
  const int64_t Wo = window_out(W, static_cast<int>(KW), opt.stride, opt.padding, opt.dilation);
  require(Ho >= 1 && Wo >= 1, "conv2d",
          "input " + shape_str(x.shape()) + " too small for weight " + shape_str(weight.shape()));
  const int64_t Og = O / G;
  const int s = opt.stride, p = opt.padding, d = opt.dilation;

  Tensor out(Shape{N, O, Ho, Wo});
  const float* xv = x.value().data();
  const float* wv = weight.value().data();
  float* ov = out.data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      const int64_t g = o / Og;
      float* op = ov + (n * O + o) * Ho * Wo;
      for (int64_t c = 0; c < Cg; ++c) {
        const float* xp = xv + (n * C + g * Cg + c) * H * W;
        for (int64_t kh = 0; kh < KH; ++kh) {
          int64_t oh_lo, oh_hi;
          valid_range(Ho, H, s, p, kh * d, oh_lo, oh_hi);
          for (int64_t kw = 0; kw < KW; ++kw) {
            const float w = wv[((o * Cg + c) * KH + kh) * KW + kw];
            if (w == 0.0f) continue;
            int64_t ow_lo, ow_hi;
            valid_range(Wo, W, s, p, kw * d, ow_lo, ow_hi);
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const float* xr = xp + (oh * s - p + kh * d) * W + (kw * d - p);
              float* orow = op + oh * Wo;
              if (s == 1) {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += w * xr[ow];
              } else {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += w * xr[ow * s];
              }
            }
          }
        }
      }
    }
  }

  const bool rec = detail::should_record({&x, &weight});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nx = x.node(), nw = weight.node(), N, C, H, W, O, Cg, KH, KW, Ho, Wo,
                           Og, s, p, d] {
      if (!o_node->grad.defined()) return;
      const float* gv = o_node->grad.data();
      const float* xv = nx->value.data();
      const float* wv = nw->value.data();
      const bool want_x = nx->requires_grad, want_w = nw->requires_grad;
      Tensor gx = want_x ? Tensor(nx->value.shape()) : Tensor();
      Tensor gw = want_w ? Tensor(nw->value.shape()) : Tensor();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
          const int64_t g = o / Og;
          const float* gp = gv + (n * O + o) * Ho * Wo;
          for (int64_t c = 0; c < Cg; ++c) {
            const int64_t plane = (n * C + g * Cg + c) * H * W;
            for (int64_t kh = 0; kh < KH; ++kh) {
              int64_t oh_lo, oh_hi;
              valid_range(Ho, H, s, p, kh * d, oh_lo, oh_hi);
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t widx = ((o * Cg + c) * KH + kh) * KW + kw;
                const float w = wv[widx];
                int64_t ow_lo, ow_hi;
                valid_range(Wo, W, s, p, kw * d, ow_lo, ow_hi);
                float wacc = 0.0f;
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const int64_t base = plane + (oh * s - p + kh * d) * W + (kw * d - p);
                  const float* grow = gp + oh * Wo;
                  if (want_w) {
                    const float* xr = xv + base;
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) wacc += grow[ow] * xr[ow * s];
                  }
                  if (want_x && w != 0.0f) {
                    float* gxr = gx.data() + base;
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) gxr[ow * s] += w * grow[ow];
                  }
                }
                if (want_w) gw[widx] += wacc;
              }
            }
          }
        }
      }
      if (want_x) push_grad(nx, std::move(gx));
      if (want_w) push_grad(nw, std::move(gw));
    });
  }
  return res;
}

Variable linear(const Variable& x, const Variable& weight, const Variable& bias) {
  require_rank(x, 2, "linear", "[batch, features]");
  require(weight.shape().size() == 2 && weight.shape()[1] == x.shape()[1], "linear",
          "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  const int64_t N = x.shape()[0], F = x.shape()[1], O = weight.shape()[0];
  if (bias.defined()) {
    require(bias.shape() == Shape{O}, "linear", "bias " + shape_str(bias.shape()) + " does not match weight " +
                                                    shape_str(weight.shape()));
  }
  Tensor out(Shape{N, O});
  const float* xv = x.value().data();
  const float* wv = weight.value().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      float acc = bias.defined() ? bias.value()[o] : 0.0f;
      const float* xr = xv + n * F;
      const float* wr = wv + o * F;
      for (int64_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
      out[n * O + o] = acc;
    }
  }
  const bool rec = detail::should_record({&x, &weight, &bias});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    NodePtr nb = bias.defined() ? bias.node() : nullptr;
    active_tape()->record([o_node = res.node(), nx = x.node(), nw = weight.node(), nb, N, F, O] {
      if (!o_node->grad.defined()) return;
      const float* gv = o_node->grad.data();
      if (nx->requires_grad) {
        Tensor gx(nx->value.shape());
        const float* wv = nw->value.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) {
            const float g = gv[n * O + o];
            for (int64_t f = 0; f < F; ++f) gx[n * F + f] += g * wv[o * F + f];
          }
        push_grad(nx, std::move(gx));
      }
      if (nw->requires_grad) {
        Tensor gw(nw->value.shape());
        const float* xv = nx->value.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) {
            const float g = gv[n * O + o];
            for (int64_t f = 0; f < F; ++f) gw[o * F + f] += g * xv[n * F + f];
          }
        push_grad(nw, std::move(gw));
      }
      if (nb && nb->requires_grad) {
        Tensor gb(nb->value.shape());
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) gb[o] += gv[n * O + o];
        push_grad(nb, std::move(gb));
      }
    });
  }
  return res;
}

Variable batch_norm(const Variable& x, const Variable& gamma, const Variable& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, float momentum, float eps) {
  require_rank(x, 4, "batch_norm", "NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  require(running_mean.shape() == Shape{C} && running_var.shape() == Shape{C}, "batch_norm",
          "running statistics " + shape_str(running_mean.shape()) + " do not match input " + shape_str(x.shape()));
  if (gamma.defined()) require(gamma.shape() == Shape{C}, "batch_norm", "gamma shape " + shape_str(gamma.shape()));
  if (beta.defined()) require(beta.shape() == Shape{C}, "batch_norm", "beta shape " + shape_str(beta.shape()));
  const int64_t M = N * HW;
  require(!training || M > 1, "batch_norm", "training mode needs more than one value per channel, got " +
                                                shape_str(x.shape()));

  const float* xv = x.value().data();
  std::vector<float> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    if (training) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const float* p = xv + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      double v = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const float* p = xv + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double dlt = p[i] - mu;
          v += dlt * dlt;
        }
      }
      const double var = v / static_cast<double>(M);
      mean[c] = static_cast<float>(mu);
      invstd[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const double unbiased = v / static_cast<double>(M - 1);
      running_mean[c] = static_cast<float>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<float>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean[c] = running_mean[c];
      invstd[c] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const float g = gamma.defined() ? gamma.value()[c] : 1.0f;
      const float b = beta.defined() ? beta.value()[c] : 0.0f;
      const int64_t off = (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        const float h = (xv[off + i] - mean[c]) * invstd[c];
        xhat[off + i] = h;
        out[off + i] = g * h + b;
      }
    }
  }

  const bool rec = detail::should_record({&x, &gamma, &beta});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    NodePtr ng = gamma.defined() ? gamma.node() : nullptr;
    NodePtr nbt = beta.defined() ? beta.node() : nullptr;
    active_tape()->record([o_node = res.node(), nx = x.node(), ng, nbt, xhat = std::move(xhat),
                           invstd = std::move(invstd), training, N, C, HW, M] {
      if (!o_node->grad.defined()) return;
      const float* gv = o_node->grad.data();
      if (ng && ng->requires_grad) {
        Tensor gg(Shape{C});
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) acc += static_cast<double>(gv[off + i]) * xhat[off + i];
          }
          gg[c] = static_cast<float>(acc);
        }
        push_grad(ng, std::move(gg));
      }
      if (nbt && nbt->requires_grad) {
        Tensor gb(Shape{C});
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) acc += gv[off + i];
          }
          gb[c] = static_cast<float>(acc);
        }
        push_grad(nbt, std::move(gb));
      }
      if (nx->requires_grad) {
        Tensor gx(nx->value.shape());
        for (int64_t c = 0; c < C; ++c) {
          const float g = ng ? ng->value[c] : 1.0f;
          if (!training) {
            for (int64_t n = 0; n < N; ++n) {
              const int64_t off = (n * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i) gx[off + i] = gv[off + i] * g * invstd[c];
            }
            continue;
          }
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              sum_dy += gv[off + i];
              sum_dy_xhat += static_cast<double>(gv[off + i]) * xhat[off + i];
            }
          }
          const double inv_m = 1.0 / static_cast<double>(M);
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              const double v = gv[off + i] - sum_dy * inv_m - xhat[off + i] * sum_dy_xhat * inv_m;
              gx[off + i] = static_cast<float>(g * invstd[c] * v);
            }
          }
        }
        push_grad(nx, std::move(gx));
      }
    });
  }
  return res;
}

Variable max_pool2d(const Variable& x, int kernel, int stride, int padding) {
  require_rank(x, 4, "max_pool2d", "NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t Ho = window_out(H, kernel, stride, padding), Wo = window_out(W, kernel, stride, padding);
  require(Ho >= 1 && Wo >= 1 && padding * 2 < kernel + 1, "max_pool2d",
          "input " + shape_str(x.shape()) + " too small for kernel " + std::to_string(kernel));
  Tensor out(Shape{N, C, Ho, Wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  const float* xv = x.value().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const float* xp = xv + nc * H * W;
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        int64_t best_idx = -1;
        for (int kh = 0; kh < kernel; ++kh) {
          const int64_t ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= H) continue;
          for (int kw = 0; kw < kernel; ++kw) {
            const int64_t iw = ow * stride - padding + kw;
            if (iw < 0 || iw >= W) continue;
            const float v = xp[ih * W + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = ih * W + iw;
            }
          }
        }
        const int64_t oi = (nc * Ho + oh) * Wo + ow;
        out[oi] = best;
        argmax[static_cast<size_t>(oi)] = nc * H * W + best_idx;
      }
  }
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nx = x.node(), argmax = std::move(argmax)] {
      if (!o_node->grad.defined()) return;
      Tensor gx(nx->value.shape());
      const float* gv = o_node->grad.data();
      for (size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gv[i];
      push_grad(nx, std::move(gx));
    });
  }
  return res;
}

Variable avg_pool2d(const Variable& x, int kernel, int stride, int padding) {
  require_rank(x, 4, "avg_pool2d", "NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t Ho = window_out(H, kernel, stride, padding), Wo = window_out(W, kernel, stride, padding);
  require(Ho >= 1 && Wo >= 1 && padding * 2 < kernel + 1, "avg_pool2d",
          "input " + shape_str(x.shape()) + " too small for kernel " + std::to_string(kernel));
  Tensor out(Shape{N, C, Ho, Wo});
  const float* xv = x.value().data();
  auto window = [=](int64_t o, int64_t in, int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(o * stride - padding, 0);
    hi = std::min<int64_t>(o * stride - padding + kernel, in);
  };
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const float* xp = xv + nc * H * W;
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow) {
        int64_t h0, h1, w0, w1;
        window(oh, H, h0, h1);
        window(ow, W, w0, w1);
        float acc = 0.0f;
        for (int64_t ih = h0; ih < h1; ++ih)
          for (int64_t iw = w0; iw < w1; ++iw) acc += xp[ih * W + iw];
        out[(nc * Ho + oh) * Wo + ow] = acc / static_cast<float>((h1 - h0) * (w1 - w0));
      }
  }
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nx = x.node(), window, N, C, H, W, Ho, Wo] {
      if (!o_node->grad.defined()) return;
      Tensor gx(nx->value.shape());
      const float* gv = o_node->grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t h0, h1, w0, w1;
            window(oh, H, h0, h1);
            window(ow, W, w0, w1);
            const float g = gv[(nc * Ho + oh) * Wo + ow] / static_cast<float>((h1 - h0) * (w1 - w0));
            for (int64_t ih = h0; ih < h1; ++ih)
              for (int64_t iw = w0; iw < w1; ++iw) gx[nc * H * W + ih * W + iw] += g;
          }
      push_grad(nx, std::move(gx));
    });
  }
  return res;
}

Variable global_avg_pool(const Variable& x) {
  require_rank(x, 4, "global_avg_pool", "NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor out(Shape{N, C});
  const float* xv = x.value().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    float acc = 0.0f;
    for (int64_t i = 0; i < HW; ++i) acc += xv[nc * HW + i];
    out[nc] = acc / static_cast<float>(HW);
  }
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nx = x.node(), N, C, HW] {
      if (!o_node->grad.defined()) return;
      Tensor gx(nx->value.shape());
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const float g = o_node->grad[nc] / static_cast<float>(HW);
        for (int64_t i = 0; i < HW; ++i) gx[nc * HW + i] = g;
      }
      push_grad(nx, std::move(gx));
    });
  }
  return res;
}

Variable softmax(const Variable& logits) {
  require_rank(logits, 1, "softmax", "rank-1");
  const int64_t K = logits.shape()[0];
  const float* lv = logits.value().data();
  float mx = lv[0];
  for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lv[k]);
  double z = 0.0;
  std::vector<double> e(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    e[k] = std::exp(static_cast<double>(lv[k]) - mx);
    z += e[k];
  }
  Tensor out(Shape{K});
  for (int64_t k = 0; k < K; ++k) out[k] = static_cast<float>(e[k] / z);
  const bool rec = detail::should_record({&logits});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nl = logits.node(), K] {
      if (!o_node->grad.defined()) return;
      const Tensor& y = o_node->value;
      const Tensor& g = o_node->grad;
      double dot = 0.0;
      for (int64_t k = 0; k < K; ++k) dot += static_cast<double>(g[k]) * y[k];
      Tensor gl(Shape{K});
      for (int64_t k = 0; k < K; ++k) gl[k] = static_cast<float>(y[k] * (g[k] - dot));
      push_grad(nl, std::move(gl));
    });
  }
  return res;
}

Variable cross_entropy(const Variable& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "[batch, classes]");
  const int64_t N = logits.shape()[0], K = logits.shape()[1];
  require(static_cast<int64_t>(labels.size()) == N, "cross_entropy",
          "logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const float* lv = logits.value().data();
  Tensor probs(Shape{N, K});
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    require(y >= 0 && y < K, "cross_entropy", "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    const float* row = lv + n * K;
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max<double>(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (int64_t k = 0; k < K; ++k) probs[n * K + k] = static_cast<float>(std::exp(row[k] - mx) / z);
    total += std::log(z) + mx - row[y];
  }
  const bool rec = detail::should_record({&logits});
  Variable res = detail::make_result(Tensor::scalar(static_cast<float>(total / static_cast<double>(N))), rec);
  if (rec) {
    std::vector<int> ys(labels.begin(), labels.end());
    active_tape()->record([o_node = res.node(), nl = logits.node(), probs = std::move(probs), ys = std::move(ys), N, K] {
      if (!o_node->grad.defined()) return;
      const float scale_by = o_node->grad[0] / static_cast<float>(N);
      Tensor gl = probs;
      for (int64_t n = 0; n < N; ++n) gl[n * K + ys[static_cast<size_t>(n)]] -= 1.0f;
      for (float& v : gl.values()) v *= scale_by;
      push_grad(nl, std::move(gl));
    });
  }
  return res;
}

Variable concat_channels(const std::vector<Variable>& xs) {
  require(!xs.empty(), "concat_channels", "needs at least one input");
  for (const auto& x : xs) require_rank(x, 4, "concat_channels", "NCHW");
  const Shape& s0 = xs.front().shape();
  int64_t C = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    require(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3], "concat_channels",
            "shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    C += s[1];
  }
  const int64_t N = s0[0], HW = s0[2] * s0[3];
  Tensor out(Shape{N, C, s0[2], s0[3]});
  int64_t c_off = 0;
  std::vector<int64_t> offsets;
  for (const auto& x : xs) {
    const int64_t Cx = x.shape()[1];
    offsets.push_back(c_off);
    for (int64_t n = 0; n < N; ++n) {
      std::copy_n(x.value().data() + n * Cx * HW, Cx * HW, out.data() + (n * C + c_off) * HW);
    }
    c_off += Cx;
  }
  const bool rec = detail::should_record(xs);
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    std::vector<NodePtr> ins;
    for (const auto& x : xs) ins.push_back(x.node());
    active_tape()->record([o_node = res.node(), ins = std::move(ins), offsets = std::move(offsets), N, C, HW] {
      if (!o_node->grad.defined()) return;
      for (size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const int64_t Cx = ins[k]->value.shape()[1];
        Tensor g(ins[k]->value.shape());
        for (int64_t n = 0; n < N; ++n) {
          std::copy_n(o_node->grad.data() + (n * C + offsets[k]) * HW, Cx * HW, g.data() + n * Cx * HW);
        }
        push_grad(ins[k], std::move(g));
      }
    });
  }
  return res;
}

Variable mix(const Variable& weights, const std::vector<Variable>& xs) {
  require_rank(weights, 1, "mix", "rank-1 weight");
  require(static_cast<size_t>(weights.shape()[0]) == xs.size() && !xs.empty(), "mix",
          "weights " + shape_str(weights.shape()) + " for " + std::to_string(xs.size()) + " inputs");
  for (const auto& x : xs) {
    require(x.shape() == xs.front().shape(), "mix",
            "candidate outputs diverge: " + shape_str(xs.front().shape()) + " vs " + shape_str(x.shape()));
  }
  Tensor out(xs.front().shape());
  float* po = out.data();
  for (size_t k = 0; k < xs.size(); ++k) {
    const float w = weights.value()[static_cast<int64_t>(k)];
    const float* px = xs[k].value().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] += w * px[i];
  }
  std::vector<Variable> all = xs;
  all.push_back(weights);
  const bool rec = detail::should_record(all);
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    std::vector<NodePtr> ins;
    for (const auto& x : xs) ins.push_back(x.node());
    active_tape()->record([o_node = res.node(), nw = weights.node(), ins = std::move(ins)] {
      if (!o_node->grad.defined()) return;
      const Tensor& g = o_node->grad;
      if (nw->requires_grad) {
        Tensor gw(nw->value.shape());
        for (size_t k = 0; k < ins.size(); ++k) {
          double acc = 0.0;
          const float* px = ins[k]->value.data();
          for (int64_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * px[i];
          gw[static_cast<int64_t>(k)] = static_cast<float>(acc);
        }
        push_grad(nw, std::move(gw));
      }
      for (size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const float w = nw->value[static_cast<int64_t>(k)];
        Tensor gx = g;
        for (float& v : gx.values()) v *= w;
        push_grad(ins[k], std::move(gx));
      }
    });
  }
  return res;
}

Variable shift_crop(const Variable& x) {
  require_rank(x, 4, "shift_crop", "NCHW");
  const int64_t NC = x.shape()[0] * x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  Tensor out(x.shape());
  const float* xv = x.value().data();
  for (int64_t nc = 0; nc < NC; ++nc)
    for (int64_t i = 0; i + 1 < H; ++i)
      for (int64_t j = 0; j + 1 < W; ++j) out[(nc * H + i) * W + j] = xv[(nc * H + i + 1) * W + j + 1];
  const bool rec = detail::should_record({&x});
  Variable res = detail::make_result(std::move(out), rec);
  if (rec) {
    active_tape()->record([o_node = res.node(), nx = x.node(), NC, H, W] {
      if (!o_node->grad.defined()) return;
      Tensor gx(nx->value.shape());
      for (int64_t nc = 0; nc < NC; ++nc)
        for (int64_t i = 0; i + 1 < H; ++i)
          for (int64_t j = 0; j + 1 < W; ++j) gx[(nc * H + i + 1) * W + j + 1] = o_node->grad[(nc * H + i) * W + j];
      push_grad(nx, std::move(gx));
    });
  }
  return res;
}

}  // namespace dass::ops
