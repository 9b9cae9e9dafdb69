#include <cmath>
#include <string>

#include "starbri/ops.hpp"

namespace starbri {

std::size_t group_count(std::size_t channels, std::size_t channels_per_group) {
  if (channels == 0) throw ShapeError("group_count: zero channels");
  if (channels_per_group == 0) return 1;
  std::size_t g = std::max<std::size_t>(1, channels / channels_per_group);
  while (channels % g != 0) --g;
  return g;
}

template <typename T>
Forward<T, GroupNormCtx<T>> group_norm(const Tensor<T>& input,
                                       std::size_t num_groups,
                                       const Tensor<T>& gamma,
                                       const Tensor<T>& beta, T eps) {
  if (input.rank() != 4) {
    throw ShapeError("group_norm: input must be NCHW, got " +
                     shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  if (num_groups == 0 || c % num_groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) +
                     " channels not divisible into " +
                     std::to_string(num_groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("group_norm: gamma/beta must have " + std::to_string(c) +
                     " entries");
  }
  if (!(eps > T(0))) throw ShapeError("group_norm: eps must be positive");
  require_finite(input, "group_norm input");

  const std::size_t cpg = c / num_groups;
  const std::size_t span = cpg * hw;
  GroupNormCtx<T> ctx;
  ctx.groups = num_groups;
  ctx.xhat = Tensor<T>(input.shape());
  ctx.rstd.resize(n * num_groups);
  ctx.gamma = gamma;
  Tensor<T> out(input.shape());

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t grp = 0; grp < num_groups; ++grp) {
      const std::size_t base = (b * c + grp * cpg) * hw;
      const T* x = input.data() + base;
      double sum = 0.0;
      for (std::size_t i = 0; i < span; ++i) sum += x[i];
      const double mean = sum / static_cast<double>(span);
      double sq = 0.0;
      for (std::size_t i = 0; i < span; ++i) {
        const double d = x[i] - mean;
        sq += d * d;
      }
      const double var = sq / static_cast<double>(span);
      const T rstd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      ctx.rstd[b * num_groups + grp] = rstd;
      T* xh = ctx.xhat.data() + base;
      T* y = out.data() + base;
      for (std::size_t ci = 0; ci < cpg; ++ci) {
        const std::size_t ch = grp * cpg + ci;
        const T gmul = gamma[ch];
        const T badd = beta[ch];
        for (std::size_t i = ci * hw; i < (ci + 1) * hw; ++i) {
          xh[i] = static_cast<T>(x[i] - mean) * rstd;
          y[i] = gmul * xh[i] + badd;
        }
      }
    }
  }
  require_finite(out, "group_norm output");
  return {std::move(out), std::move(ctx)};
}

template <typename T>
GroupNormGrads<T> group_norm_backward(const GroupNormCtx<T>& ctx,
                                      const Tensor<T>& grad_out) {
  if (grad_out.shape() != ctx.xhat.shape()) {
    throw ShapeError("group_norm_backward: grad_out " +
                     shape_str(grad_out.shape()) + " does not match " +
                     shape_str(ctx.xhat.shape()));
  }
  const std::size_t n = grad_out.dim(0);
  const std::size_t c = grad_out.dim(1);
  const std::size_t hw = grad_out.dim(2) * grad_out.dim(3);
  const std::size_t groups = ctx.groups;
  const std::size_t cpg = c / groups;
  const std::size_t span = cpg * hw;

  GroupNormGrads<T> grads;
  grads.input = Tensor<T>(grad_out.shape());
  grads.gamma = Tensor<T>({c});
  grads.beta = Tensor<T>({c});

  std::vector<T> dxhat(span);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const std::size_t base = (b * c + grp * cpg) * hw;
      const T* dy = grad_out.data() + base;
      const T* xh = ctx.xhat.data() + base;
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (std::size_t ci = 0; ci < cpg; ++ci) {
        const std::size_t ch = grp * cpg + ci;
        const T gmul = ctx.gamma[ch];
        double dg = 0.0;
        double db = 0.0;
        for (std::size_t i = ci * hw; i < (ci + 1) * hw; ++i) {
          dg += static_cast<double>(dy[i]) * xh[i];
          db += dy[i];
          dxhat[i] = dy[i] * gmul;
          sum_d += dxhat[i];
          sum_dx += static_cast<double>(dxhat[i]) * xh[i];
        }
        grads.gamma[ch] += static_cast<T>(dg);
        grads.beta[ch] += static_cast<T>(db);
      }
      const T mean_d = static_cast<T>(sum_d / static_cast<double>(span));
      const T mean_dx = static_cast<T>(sum_dx / static_cast<double>(span));
      const T rstd = ctx.rstd[b * groups + grp];
      T* dx = grads.input.data() + base;
      for (std::size_t i = 0; i < span; ++i) {
        dx[i] = rstd * (dxhat[i] - mean_d - xh[i] * mean_dx);
      }
    }
  }
  return grads;
}

template Forward<float, GroupNormCtx<float>> group_norm<float>(
    const Tensor<float>&, std::size_t, const Tensor<float>&,
    const Tensor<float>&, float);
template Forward<double, GroupNormCtx<double>> group_norm<double>(
    const Tensor<double>&, std::size_t, const Tensor<double>&,
    const Tensor<double>&, double);
template GroupNormGrads<float> group_norm_backward<float>(
    const GroupNormCtx<float>&, const Tensor<float>&);
template GroupNormGrads<double> group_norm_backward<double>(
    const GroupNormCtx<double>&, const Tensor<double>&);

}  // namespace starbri
