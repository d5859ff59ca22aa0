#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ref {

namespace {
int64_t out_size(int64_t in, int64_t k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}
}  // namespace

Dims4 conv_out_dims(const Dims4& x, const ConvSpec& s) {
  return {x.n, s.out_channels, out_size(x.h, s.kernel_h, s.stride, s.padding, s.dilation),
          out_size(x.w, s.kernel_w, s.stride, s.padding, s.dilation)};
}

Vec conv2d(const Vec& x, const Dims4& xd, const Vec& w, const ConvSpec& s) {
  const Dims4 od = conv_out_dims(xd, s);
  const int64_t cin_g = xd.c / s.groups, cout_g = s.out_channels / s.groups;
  Vec out(static_cast<size_t>(od.numel()), 0.0);
  for (int64_t n = 0; n < od.n; ++n)
    for (int64_t o = 0; o < od.c; ++o) {
      const int64_t g = o / cout_g;
      for (int64_t i = 0; i < od.h; ++i)
        for (int64_t j = 0; j < od.w; ++j) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < cin_g; ++ci)
            for (int64_t ki = 0; ki < s.kernel_h; ++ki)
              for (int64_t kj = 0; kj < s.kernel_w; ++kj) {
                const int64_t y = i * s.stride - s.padding + ki * s.dilation;
                const int64_t xx = j * s.stride - s.padding + kj * s.dilation;
                if (y < 0 || y >= xd.h || xx < 0 || xx >= xd.w) continue;
                const int64_t c = g * cin_g + ci;
                acc += x[static_cast<size_t>(((n * xd.c + c) * xd.h + y) * xd.w + xx)] *
                       w[static_cast<size_t>(((o * cin_g + ci) * s.kernel_h + ki) * s.kernel_w + kj)];
              }
          out[static_cast<size_t>(((n * od.c + o) * od.h + i) * od.w + j)] = acc;
        }
    }
  return out;
}

Vec linear(const Vec& x, int64_t batch, int64_t in, const Vec& w, int64_t out, const Vec* bias) {
  Vec y(static_cast<size_t>(batch * out), 0.0);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t o = 0; o < out; ++o) {
      double acc = bias ? (*bias)[static_cast<size_t>(o)] : 0.0;
      for (int64_t f = 0; f < in; ++f) acc += x[static_cast<size_t>(n * in + f)] * w[static_cast<size_t>(o * in + f)];
      y[static_cast<size_t>(n * out + o)] = acc;
    }
  return y;
}

Vec batch_norm_eval(const Vec& x, const Dims4& d, const Vec& mean, const Vec& var, const Vec* gamma, const Vec* beta,
                    double eps) {
  Vec y(x.size());
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c)
      for (int64_t i = 0; i < d.h * d.w; ++i) {
        const size_t k = static_cast<size_t>((n * d.c + c) * d.h * d.w + i);
        double v = (x[k] - mean[static_cast<size_t>(c)]) / std::sqrt(var[static_cast<size_t>(c)] + eps);
        if (gamma) v = v * (*gamma)[static_cast<size_t>(c)] + (*beta)[static_cast<size_t>(c)];
        y[k] = v;
      }
  return y;
}

Vec batch_norm_train(const Vec& x, const Dims4& d, const Vec* gamma, const Vec* beta, double eps) {
  Vec mean(static_cast<size_t>(d.c), 0.0), var(static_cast<size_t>(d.c), 0.0);
  const double m = static_cast<double>(d.n * d.h * d.w);
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t i = 0; i < d.h * d.w; ++i) mean[static_cast<size_t>(c)] += x[static_cast<size_t>((n * d.c + c) * d.h * d.w + i)];
    mean[static_cast<size_t>(c)] /= m;
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t i = 0; i < d.h * d.w; ++i) {
        const double dv = x[static_cast<size_t>((n * d.c + c) * d.h * d.w + i)] - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += dv * dv;
      }
    var[static_cast<size_t>(c)] /= m;
  }
  return batch_norm_eval(x, d, mean, var, gamma, beta, eps);
}

Dims4 pool_out_dims(const Dims4& x, int kernel, int stride, int padding) {
  return {x.n, x.c, out_size(x.h, kernel, stride, padding, 1), out_size(x.w, kernel, stride, padding, 1)};
}

namespace {
template <typename Reduce>
Vec pool(const Vec& x, const Dims4& d, int kernel, int stride, int padding, Reduce reduce) {
  const Dims4 od = pool_out_dims(d, kernel, stride, padding);
  Vec out(static_cast<size_t>(od.numel()));
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c)
      for (int64_t i = 0; i < od.h; ++i)
        for (int64_t j = 0; j < od.w; ++j) {
          std::vector<double> window;
          for (int ki = 0; ki < kernel; ++ki)
            for (int kj = 0; kj < kernel; ++kj) {
              const int64_t y = i * stride - padding + ki, xx = j * stride - padding + kj;
              if (y >= 0 && y < d.h && xx >= 0 && xx < d.w) window.push_back(x[static_cast<size_t>(((n * d.c + c) * d.h + y) * d.w + xx)]);
            }
          out[static_cast<size_t>(((n * d.c + c) * od.h + i) * od.w + j)] = reduce(window);
        }
  return out;
}
}  // namespace

Vec max_pool(const Vec& x, const Dims4& d, int kernel, int stride, int padding) {
  return pool(x, d, kernel, stride, padding, [](const std::vector<double>& w) { return *std::max_element(w.begin(), w.end()); });
}

Vec avg_pool(const Vec& x, const Dims4& d, int kernel, int stride, int padding) {
  return pool(x, d, kernel, stride, padding, [](const std::vector<double>& w) {
    double s = 0.0;
    for (double v : w) s += v;
    return s / static_cast<double>(w.size());
  });
}

Vec global_avg_pool(const Vec& x, const Dims4& d) {
  Vec out(static_cast<size_t>(d.n * d.c), 0.0);
  for (int64_t nc = 0; nc < d.n * d.c; ++nc) {
    for (int64_t i = 0; i < d.h * d.w; ++i) out[static_cast<size_t>(nc)] += x[static_cast<size_t>(nc * d.h * d.w + i)];
    out[static_cast<size_t>(nc)] /= static_cast<double>(d.h * d.w);
  }
  return out;
}

Vec softmax(const Vec& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  Vec e(z.size());
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) s += (e[i] = std::exp(z[i] - mx));
  for (double& v : e) v /= s;
  return e;
}

double cross_entropy(const Vec& logits, int64_t batch, int64_t classes, const std::vector<int>& labels) {
  double total = 0.0;
  for (int64_t n = 0; n < batch; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < classes; ++k) mx = std::max(mx, logits[static_cast<size_t>(n * classes + k)]);
    double s = 0.0;
    for (int64_t k = 0; k < classes; ++k) s += std::exp(logits[static_cast<size_t>(n * classes + k)] - mx);
    total += mx + std::log(s) - logits[static_cast<size_t>(n * classes + labels[static_cast<size_t>(n)])];
  }
  return total / static_cast<double>(batch);
}

Vec shift_crop(const Vec& x, const Dims4& d) {
  Vec out(x.size(), 0.0);
  for (int64_t nc = 0; nc < d.n * d.c; ++nc)
    for (int64_t i = 0; i + 1 < d.h; ++i)
      for (int64_t j = 0; j + 1 < d.w; ++j)
        out[static_cast<size_t>((nc * d.h + i) * d.w + j)] = x[static_cast<size_t>((nc * d.h + i + 1) * d.w + j + 1)];
  return out;
}

Vec relu(const Vec& x) {
  Vec y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

double kendall_tau_b(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<int64_t>(a.size());
  int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double da = a[static_cast<size_t>(i)] - a[static_cast<size_t>(j)];
      const double db = b[static_cast<size_t>(i)] - b[static_cast<size_t>(j)];
      if (da == 0.0) ++ties_a;
      if (db == 0.0) ++ties_b;
      if (da == 0.0 || db == 0.0) continue;
      ((da > 0) == (db > 0) ? concordant : discordant) += 1;
    }
  const int64_t pairs = n * (n - 1) / 2;
  return 100.0 * static_cast<double>(concordant - discordant) /
         std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
}

}  // namespace ref
