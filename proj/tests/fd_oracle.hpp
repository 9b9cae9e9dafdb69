#pragma once

// Test-only reference implementations. Deliberately naive and independent of
// the library kernels: direct loops, no im2col, no GEMM.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "starbri/tensor.hpp"

namespace oracle {

using starbri::Tensor;

inline Tensor<double> random_tensor(starbri::Shape shape, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Cross-correlation with zero padding, straight from the definition.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, int stride, int pad) {
  const long n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long oh = (h + 2 * pad - kh) / stride + 1;
  const long ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> y({std::size_t(n), std::size_t(cout), std::size_t(oh), std::size_t(ow)});
  for (long s = 0; s < n; ++s)
    for (long co = 0; co < cout; ++co)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          double acc = b[co];
          for (long ci = 0; ci < cin; ++ci)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long iy = oy * stride - pad + ky;
                const long ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(s, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(s, co, oy, ox) = acc;
        }
  return y;
}

// Transposed convolution as a scatter: every input pixel spreads its kernel
// footprint into the output. Weight layout [Cin, Cout, K, K].
inline Tensor<double> conv_transpose2d(const Tensor<double>& x,
                                       const Tensor<double>& w,
                                       const Tensor<double>& b, int stride,
                                       int pad) {
  const long n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const long oh = (h - 1) * stride - 2 * pad + kh;
  const long ow = (wd - 1) * stride - 2 * pad + kw;
  Tensor<double> y({std::size_t(n), std::size_t(cout), std::size_t(oh), std::size_t(ow)});
  for (long s = 0; s < n; ++s)
    for (long co = 0; co < cout; ++co)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) y.at(s, co, oy, ox) = b[co];
  for (long s = 0; s < n; ++s)
    for (long ci = 0; ci < cin; ++ci)
      for (long iy = 0; iy < h; ++iy)
        for (long ix = 0; ix < wd; ++ix)
          for (long co = 0; co < cout; ++co)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long oy = iy * stride - pad + ky;
                const long ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                y.at(s, co, oy, ox) += x.at(s, ci, iy, ix) * w.at(ci, co, ky, kx);
              }
  return y;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population variance
};

// Mean and variance of channels [c0, c1) of sample s, two-pass.
inline Moments group_moments(const Tensor<double>& x, std::size_t s,
                             std::size_t c0, std::size_t c1) {
  const std::size_t hw = x.dim(2) * x.dim(3);
  double sum = 0.0;
  for (std::size_t c = c0; c < c1; ++c)
    for (std::size_t i = 0; i < hw; ++i) sum += x[(s * x.dim(1) + c) * hw + i];
  const double count = static_cast<double>((c1 - c0) * hw);
  Moments m;
  m.mean = sum / count;
  for (std::size_t c = c0; c < c1; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      const double d = x[(s * x.dim(1) + c) * hw + i] - m.mean;
      m.var += d * d;
    }
  m.var /= count;
  return m;
}

// Central difference of f with respect to every element of `slot`.
inline std::vector<double> central_gradient(Tensor<double>& slot,
                                            const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> g(slot.numel());
  for (std::size_t i = 0; i < slot.numel(); ++i) {
    const double keep = slot[i];
    slot[i] = keep + h;
    const double up = f();
    slot[i] = keep - h;
    const double down = f();
    slot[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(const Tensor<double>& analytic,
                            const std::vector<double>& numeric,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::fabs(a), std::fabs(n), floor});
    worst = std::max(worst, std::fabs(a - n) / denom);
  }
  return worst;
}

// <a, b> over all elements; turns a tensor output into a scalar objective.
inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace oracle
