#include "gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dass/ops.hpp"
#include "dass/sparse.hpp"

namespace gradcheck {

using dass::Rng;
using dass::Shape;
using dass::Tensor;
using dass::Variable;
namespace ops = dass::ops;

namespace {

int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<uint64_t>(hi - lo + 1))); }

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

// Magnitudes in [0.05, 1] so a step of 1e-3 never crosses zero.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>((0.05 + 0.95 * rng.uniform()) * (rng.below(2) ? 1.0 : -1.0));
  return t;
}

// Pairwise gaps of at least 0.01 so max selections are stable under the step.
Tensor distinct(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  const auto order = rng.permutation(t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(order[static_cast<size_t>(i)]) * 0.01f - 0.5f;
  return t;
}

Tensor binary(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = rng.below(3) == 0 ? 0.0f : 1.0f;
  return t;
}

ref::Vec to_vec(const Tensor& t) { return ref::Vec(t.values().begin(), t.values().end()); }

ref::Dims4 dims(const Shape& s) { return {s[0], s[1], s[2], s[3]}; }

ref::Vec elementwise(const ref::Vec& a, const ref::Vec& b, double (*f)(double, double)) {
  ref::Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Shape small_shape(Rng& rng) {
  Shape s;
  const int rank = pick(rng, 1, 4);
  for (int i = 0; i < rank; ++i) s.push_back(pick(rng, 1, 4));
  return s;
}

Shape image_shape(Rng& rng, int min_hw = 1) {
  return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, min_hw, 6), pick(rng, min_hw, 6)};
}

struct ConvDraw {
  Shape x, w;
  ops::Conv2dOptions opt;
  ref::ConvSpec spec;
};

ConvDraw draw_conv(Rng& rng) {
  for (;;) {
    const int n = pick(rng, 1, 2), c = pick(rng, 1, 4);
    const bool depthwise = rng.below(2) == 0;
    const int groups = depthwise ? c : 1;
    const int out = depthwise ? c : pick(rng, 1, 4);
    const int k = std::array<int, 3>{1, 3, 5}[rng.below(3)];
    const int dilation = pick(rng, 1, 2), stride = pick(rng, 1, 2);
    const int padding = pick(rng, 0, dilation * (k - 1) / 2);
    const int h = pick(rng, 2, 7), w = pick(rng, 2, 7);
    if (ops::window_out(h, k, stride, padding, dilation) < 1 || ops::window_out(w, k, stride, padding, dilation) < 1) continue;
    ConvDraw d;
    d.x = {n, c, h, w};
    d.w = {out, c / groups, k, k};
    d.opt = {stride, padding, dilation, groups};
    d.spec = {out, k, k, stride, padding, dilation, groups};
    return d;
  }
}

ref::Vec effective(const ref::Vec& theta, const ref::Vec* factor) {
  if (!factor) return theta;
  return elementwise(theta, *factor, [](double a, double b) { return a * b; });
}

dass::SparseParam make_param(const std::vector<Variable>& v, dass::ForwardMode mode, const Tensor& mask) {
  dass::SparseParam p;
  p.theta = v[1];
  p.scores = mode == dass::ForwardMode::kScoreScaled ? v[2] : Variable(Tensor(v[1].shape(), 1.0f));
  p.mask = Variable(mask);
  p.k = p.popcount();
  return p;
}

Family sparse_conv_family(dass::ForwardMode mode) {
  return {std::string("sparse_conv2d/") + dass::to_string(mode), [mode](Rng& rng) {
            const ConvDraw d = draw_conv(rng);
            Case c;
            const Tensor mask = binary(d.w, rng);
            c.inputs = {uniform(d.x, rng), uniform(d.w, rng)};
            c.check = {true, true};
            if (mode == dass::ForwardMode::kScoreScaled) {
              c.inputs.push_back(uniform(d.w, rng));
              c.check.push_back(true);
            }
            c.forward = [d, mode, mask](const std::vector<Variable>& v) {
              return dass::sparse_conv2d(v[0], make_param(v, mode, mask), d.opt, mode);
            };
            const ref::Vec m = to_vec(mask);
            c.reference = [d, mode, m](const std::vector<ref::Vec>& x) {
              const ref::Vec* factor = mode == dass::ForwardMode::kScoreScaled ? &x[2]
                                       : mode == dass::ForwardMode::kMasked    ? &m
                                                                               : nullptr;
              return ref::conv2d(x[0], dims(d.x), effective(x[1], factor), d.spec);
            };
            return c;
          }};
}

Family sparse_linear_family(dass::ForwardMode mode) {
  return {std::string("sparse_linear/") + dass::to_string(mode), [mode](Rng& rng) {
            const int n = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
            Case c;
            const Tensor mask = binary({out, in}, rng);
            c.inputs = {uniform({n, in}, rng), uniform({out, in}, rng), uniform({out}, rng)};
            c.check = {true, true, true};
            if (mode == dass::ForwardMode::kScoreScaled) {
              c.inputs.insert(c.inputs.begin() + 2, uniform({out, in}, rng));
              c.check.push_back(true);
            }
            const size_t bias_at = c.inputs.size() - 1;
            c.forward = [mode, mask, bias_at](const std::vector<Variable>& v) {
              return dass::sparse_linear(v[0], make_param(v, mode, mask), v[bias_at], mode);
            };
            const ref::Vec m = to_vec(mask);
            c.reference = [mode, m, n, in, out, bias_at](const std::vector<ref::Vec>& x) {
              const ref::Vec* factor = mode == dass::ForwardMode::kScoreScaled ? &x[2]
                                       : mode == dass::ForwardMode::kMasked    ? &m
                                                                               : nullptr;
              return ref::linear(x[0], n, in, effective(x[1], factor), out, &x[bias_at]);
            };
            return c;
          }};
}

}  // namespace

Result run(const Case& c, Rng& rng, double eps) {
  std::vector<Variable> vars;
  for (size_t i = 0; i < c.inputs.size(); ++i) vars.emplace_back(c.inputs[i], c.check[i]);
  dass::Tape tape;
  Variable out, loss;
  Tensor proj;
  {
    dass::TapeScope scope(tape);
    out = c.forward(vars);
    proj = uniform(out.shape(), rng);
    loss = ops::sum(ops::mul(out, Variable(proj)));
  }
  tape.backward(loss);

  std::vector<ref::Vec> xs;
  for (const auto& t : c.inputs) xs.push_back(to_vec(t));
  Result r;
  const ref::Vec y0 = c.reference(xs);
  for (size_t i = 0; i < y0.size(); ++i) r.forward_error = std::max(r.forward_error, std::abs(y0[i] - out.value()[static_cast<int64_t>(i)]));
  auto objective = [&](const std::vector<ref::Vec>& x) {
    const ref::Vec y = c.reference(x);
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * proj[static_cast<int64_t>(i)];
    return s;
  };
  double max_diff = 0.0, max_fd = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!c.check[i]) continue;
    const bool has = vars[i].has_grad();
    for (size_t j = 0; j < xs[i].size(); ++j) {
      const double saved = xs[i][j];
      xs[i][j] = saved + eps;
      const double up = objective(xs);
      xs[i][j] = saved - eps;
      const double down = objective(xs);
      xs[i][j] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = has ? vars[i].grad()[static_cast<int64_t>(j)] : 0.0;
      max_diff = std::max(max_diff, std::abs(ad - fd));
      max_fd = std::max(max_fd, std::abs(fd));
    }
  }
  r.rel_error = max_diff / std::max(max_fd, 1e-6);
  return r;
}

std::vector<Family> families() {
  std::vector<Family> f;
  f.push_back({"add", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 Case c{{uniform(s, rng), uniform(s, rng)}, {true, true}, [](const std::vector<Variable>& v) { return ops::add(v[0], v[1]); },
                        [](const std::vector<ref::Vec>& x) { return elementwise(x[0], x[1], [](double a, double b) { return a + b; }); }};
                 return c;
               }});
  f.push_back({"add_n", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 const int k = pick(rng, 1, 4);
                 Case c;
                 for (int i = 0; i < k; ++i) {
                   c.inputs.push_back(uniform(s, rng));
                   c.check.push_back(true);
                 }
                 c.forward = [](const std::vector<Variable>& v) { return ops::add_n(v); };
                 c.reference = [](const std::vector<ref::Vec>& x) {
                   ref::Vec out(x[0].size(), 0.0);
                   for (const auto& xi : x)
                     for (size_t j = 0; j < out.size(); ++j) out[j] += xi[j];
                   return out;
                 };
                 return c;
               }});
  f.push_back({"mul", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 Case c{{uniform(s, rng), uniform(s, rng)}, {true, true}, [](const std::vector<Variable>& v) { return ops::mul(v[0], v[1]); },
                        [](const std::vector<ref::Vec>& x) { return elementwise(x[0], x[1], [](double a, double b) { return a * b; }); }};
                 return c;
               }});
  f.push_back({"scale", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 const auto k = static_cast<float>(4.0 * rng.uniform() - 2.0);
                 Case c{{uniform(s, rng)}, {true}, [k](const std::vector<Variable>& v) { return ops::scale(v[0], k); },
                        [k](const std::vector<ref::Vec>& x) {
                          ref::Vec y(x[0]);
                          for (double& v : y) v *= k;
                          return y;
                        }};
                 return c;
               }});
  f.push_back({"sum", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 Case c{{uniform(s, rng)}, {true}, [](const std::vector<Variable>& v) { return ops::sum(v[0]); },
                        [](const std::vector<ref::Vec>& x) {
                          double t = 0.0;
                          for (double v : x[0]) t += v;
                          return ref::Vec{t};
                        }};
                 return c;
               }});
  f.push_back({"relu", [](Rng& rng) {
                 const Shape s = small_shape(rng);
                 Case c{{away_from_zero(s, rng)}, {true}, [](const std::vector<Variable>& v) { return ops::relu(v[0]); },
                        [](const std::vector<ref::Vec>& x) { return ref::relu(x[0]); }};
                 return c;
               }});
  f.push_back({"conv2d", [](Rng& rng) {
                 const ConvDraw d = draw_conv(rng);
                 Case c{{uniform(d.x, rng), uniform(d.w, rng)}, {true, true},
                        [d](const std::vector<Variable>& v) { return ops::conv2d(v[0], v[1], d.opt); },
                        [d](const std::vector<ref::Vec>& x) { return ref::conv2d(x[0], dims(d.x), x[1], d.spec); }};
                 return c;
               }});
  f.push_back({"linear", [](Rng& rng) {
                 const int n = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
                 const bool bias = rng.below(2) == 0;
                 Case c;
                 c.inputs = {uniform({n, in}, rng), uniform({out, in}, rng)};
                 c.check = {true, true};
                 if (bias) {
                   c.inputs.push_back(uniform({out}, rng));
                   c.check.push_back(true);
                 }
                 c.forward = [bias](const std::vector<Variable>& v) { return ops::linear(v[0], v[1], bias ? v[2] : Variable()); };
                 c.reference = [=](const std::vector<ref::Vec>& x) { return ref::linear(x[0], n, in, x[1], out, bias ? &x[2] : nullptr); };
                 return c;
               }});
  f.push_back({"batch_norm/train", [](Rng& rng) {
                 Shape s = image_shape(rng, 2);
                 const bool affine = rng.below(2) == 0;
                 const int64_t ch = s[1];
                 Case c;
                 c.inputs = {uniform(s, rng, -2.0, 2.0)};
                 c.check = {true};
                 if (affine) {
                   c.inputs.push_back(uniform({ch}, rng, 0.5, 1.5));
                   c.inputs.push_back(uniform({ch}, rng));
                   c.check.insert(c.check.end(), {true, true});
                 }
                 c.forward = [affine, ch](const std::vector<Variable>& v) {
                   Tensor mean({ch}, 0.0f), var({ch}, 1.0f);
                   return ops::batch_norm(v[0], affine ? v[1] : Variable(), affine ? v[2] : Variable(), mean, var, true);
                 };
                 c.reference = [affine, s](const std::vector<ref::Vec>& x) {
                   return ref::batch_norm_train(x[0], dims(s), affine ? &x[1] : nullptr, affine ? &x[2] : nullptr, 1e-5);
                 };
                 return c;
               }});
  f.push_back({"batch_norm/eval", [](Rng& rng) {
                 Shape s = image_shape(rng);
                 const int64_t ch = s[1];
                 const Tensor mean = uniform({ch}, rng), var = uniform({ch}, rng, 0.5, 2.0);
                 Case c;
                 c.inputs = {uniform(s, rng), uniform({ch}, rng, 0.5, 1.5), uniform({ch}, rng)};
                 c.check = {true, true, true};
                 c.forward = [mean, var](const std::vector<Variable>& v) {
                   Tensor m = mean, r = var;
                   return ops::batch_norm(v[0], v[1], v[2], m, r, false);
                 };
                 c.reference = [s, mean, var](const std::vector<ref::Vec>& x) {
                   return ref::batch_norm_eval(x[0], dims(s), to_vec(mean), to_vec(var), &x[1], &x[2], 1e-5);
                 };
                 return c;
               }});
  f.push_back({"max_pool2d", [](Rng& rng) {
                 const Shape s = image_shape(rng, 2);
                 const int stride = pick(rng, 1, 2);
                 Case c{{distinct(s, rng)}, {true}, [stride](const std::vector<Variable>& v) { return ops::max_pool2d(v[0], 3, stride, 1); },
                        [s, stride](const std::vector<ref::Vec>& x) { return ref::max_pool(x[0], dims(s), 3, stride, 1); }};
                 return c;
               }});
  f.push_back({"avg_pool2d", [](Rng& rng) {
                 const Shape s = image_shape(rng, 2);
                 const int stride = pick(rng, 1, 2);
                 Case c{{uniform(s, rng)}, {true}, [stride](const std::vector<Variable>& v) { return ops::avg_pool2d(v[0], 3, stride, 1); },
                        [s, stride](const std::vector<ref::Vec>& x) { return ref::avg_pool(x[0], dims(s), 3, stride, 1); }};
                 return c;
               }});
  f.push_back({"global_avg_pool", [](Rng& rng) {
                 const Shape s = image_shape(rng);
                 Case c{{uniform(s, rng)}, {true}, [](const std::vector<Variable>& v) { return ops::global_avg_pool(v[0]); },
                        [s](const std::vector<ref::Vec>& x) { return ref::global_avg_pool(x[0], dims(s)); }};
                 return c;
               }});
  f.push_back({"softmax", [](Rng& rng) {
                 const int n = pick(rng, 1, 8);
                 Case c{{uniform({n}, rng, -3.0, 3.0)}, {true}, [](const std::vector<Variable>& v) { return ops::softmax(v[0]); },
                        [](const std::vector<ref::Vec>& x) { return ref::softmax(x[0]); }};
                 return c;
               }});
  f.push_back({"cross_entropy", [](Rng& rng) {
                 const int n = pick(rng, 1, 5), k = pick(rng, 2, 6);
                 std::vector<int> labels;
                 for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(k))));
                 Case c{{uniform({n, k}, rng, -3.0, 3.0)}, {true},
                        [labels](const std::vector<Variable>& v) { return ops::cross_entropy(v[0], labels); },
                        [labels, n, k](const std::vector<ref::Vec>& x) { return ref::Vec{ref::cross_entropy(x[0], n, k, labels)}; }};
                 return c;
               }});
  f.push_back({"concat_channels", [](Rng& rng) {
                 const int n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4), parts = pick(rng, 1, 3);
                 Case c;
                 std::vector<Shape> shapes;
                 for (int i = 0; i < parts; ++i) {
                   shapes.push_back({n, pick(rng, 1, 3), h, w});
                   c.inputs.push_back(uniform(shapes.back(), rng));
                   c.check.push_back(true);
                 }
                 c.forward = [](const std::vector<Variable>& v) { return ops::concat_channels(v); };
                 c.reference = [shapes, n, h, w](const std::vector<ref::Vec>& x) {
                   ref::Vec out;
                   for (int b = 0; b < n; ++b)
                     for (size_t i = 0; i < x.size(); ++i) {
                       const int64_t block = shapes[i][1] * h * w;
                       out.insert(out.end(), x[i].begin() + b * block, x[i].begin() + (b + 1) * block);
                     }
                   return out;
                 };
                 return c;
               }});
  f.push_back({"mix", [](Rng& rng) {
                 const Shape s = image_shape(rng);
                 const int k = pick(rng, 1, 5);
                 Case c;
                 c.inputs.push_back(uniform({k}, rng));
                 c.check.push_back(true);
                 for (int i = 0; i < k; ++i) {
                   c.inputs.push_back(uniform(s, rng));
                   c.check.push_back(true);
                 }
                 c.forward = [](const std::vector<Variable>& v) {
                   return ops::mix(v[0], std::vector<Variable>(v.begin() + 1, v.end()));
                 };
                 c.reference = [](const std::vector<ref::Vec>& x) {
                   ref::Vec out(x[1].size(), 0.0);
                   for (size_t i = 1; i < x.size(); ++i)
                     for (size_t j = 0; j < out.size(); ++j) out[j] += x[0][i - 1] * x[i][j];
                   return out;
                 };
                 return c;
               }});
  f.push_back({"shift_crop", [](Rng& rng) {
                 const Shape s = image_shape(rng);
                 Case c{{uniform(s, rng)}, {true}, [](const std::vector<Variable>& v) { return ops::shift_crop(v[0]); },
                        [s](const std::vector<ref::Vec>& x) { return ref::shift_crop(x[0], dims(s)); }};
                 return c;
               }});
  for (auto mode : {dass::ForwardMode::kDense, dass::ForwardMode::kScoreScaled, dass::ForwardMode::kMasked}) {
    f.push_back(sparse_conv_family(mode));
    f.push_back(sparse_linear_family(mode));
  }
  return f;
}

}  // namespace gradcheck
