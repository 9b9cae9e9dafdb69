#include <algorithm>
#include <atomic>
#include <string>

#include "starbri/gemm.hpp"
#include "starbri/ops.hpp"

namespace starbri {

namespace {

std::atomic<bool> g_finite_checks{true};

// [N, C, HW] -> [C, N*HW]
template <typename T>
void batch_major_to_channel_major(const T* src, std::size_t n, std::size_t c,
                                  std::size_t hw, T* dst) {
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(src + (b * c + ch) * hw, hw, dst + ch * n * hw + b * hw);
    }
  }
}

// [C, N*HW] -> [N, C, HW]
template <typename T>
void channel_major_to_batch_major(const T* src, std::size_t n, std::size_t c,
                                  std::size_t hw, T* dst) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(src + ch * n * hw + b * hw, hw, dst + (b * c + ch) * hw);
    }
  }
}

template <typename T>
void require_rank4(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be rank 4 (NCHW), got " +
                     shape_str(t.shape()));
  }
}

template <typename T>
void require_bias(const Tensor<T>& bias, std::size_t channels,
                  const char* op) {
  if (bias.numel() != channels || bias.rank() != 1) {
    throw ShapeError(std::string(op) + ": bias must have shape [" +
                     std::to_string(channels) + "], got " +
                     shape_str(bias.shape()));
  }
}

void require_conv_params(int stride, int padding, const char* op) {
  if (stride < 1) {
    throw ShapeError(std::string(op) + ": stride must be >= 1");
  }
  if (padding < 0) {
    throw ShapeError(std::string(op) + ": padding must be >= 0");
  }
}

// Output columns ox whose source column ox*stride + kj - pad lies inside the
// image, as a half-open range.
struct ColRange {
  std::size_t lo, hi;
};

ColRange valid_columns(const ConvGeometry& g, std::size_t kj) {
  const std::size_t pad = static_cast<std::size_t>(g.padding);
  const std::size_t s = static_cast<std::size_t>(g.stride);
  const std::size_t lo = kj >= pad ? 0 : (pad - kj + s - 1) / s;
  const std::size_t end = g.in_w + pad;  // ox*s + kj < in_w + pad
  const std::size_t hi = end <= kj ? 0 : std::min(g.out_w, (end - kj + s - 1) / s);
  return {std::min(lo, hi), hi};
}

}  // namespace

bool finite_checks_enabled() noexcept {
  return g_finite_checks.load(std::memory_order_relaxed);
}

void set_finite_checks(bool enabled) noexcept {
  g_finite_checks.store(enabled, std::memory_order_relaxed);
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* where) {
  if (!finite_checks_enabled()) return;
  const T* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(where) + ": non-finite value at flat index " +
                         std::to_string(i) + " of tensor " +
                         shape_str(t.shape()));
    }
  }
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t out_hw = g.out_h * g.out_w;
  const std::size_t ncols = g.batch * out_hw;
  const std::size_t pad = static_cast<std::size_t>(g.padding);
  const std::size_t stride = static_cast<std::size_t>(g.stride);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const ColRange xr = valid_columns(g, kj);
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        T* dst = cols + row * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = image + (n * g.in_channels + c) * g.in_h * g.in_w;
          T* out = dst + n * out_hw;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            T* orow = out + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
              std::fill_n(orow, g.out_w, T{0});
              continue;
            }
            const T* irow = plane + static_cast<std::size_t>(iy) * g.in_w;
            std::fill_n(orow, xr.lo, T{0});
            if (stride == 1) {
              std::copy(irow + (xr.lo + kj - pad), irow + (xr.hi + kj - pad), orow + xr.lo);
            } else {
              for (std::size_t ox = xr.lo; ox < xr.hi; ++ox) {
                orow[ox] = irow[ox * stride + kj - pad];
              }
            }
            std::fill(orow + xr.hi, orow + g.out_w, T{0});
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t out_hw = g.out_h * g.out_w;
  const std::size_t ncols = g.batch * out_hw;
  const std::size_t pad = static_cast<std::size_t>(g.padding);
  const std::size_t stride = static_cast<std::size_t>(g.stride);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const ColRange xr = valid_columns(g, kj);
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        const T* src = cols + row * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = image + (n * g.in_channels + c) * g.in_h * g.in_w;
          const T* in = src + n * out_hw;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            T* irow = plane + static_cast<std::size_t>(iy) * g.in_w;
            const T* crow = in + oy * g.out_w;
            for (std::size_t ox = xr.lo; ox < xr.hi; ++ox) {
              irow[ox * stride + kj - pad] += crow[ox];
            }
          }
        }
      }
    }
  }
}

namespace {

// Samples per chunk: enough columns to keep the GEMM panels busy, few enough
// that the column buffer stays in cache.
std::size_t chunk_samples(std::size_t batch, std::size_t depth,
                          std::size_t hw) {
  constexpr std::size_t kTargetElems = 1 << 16;
  constexpr std::size_t kMinCols = 256;
  const std::size_t by_cols = (kMinCols + hw - 1) / hw;
  const std::size_t by_cache = kTargetElems / std::max<std::size_t>(1, depth * hw);
  return std::clamp<std::size_t>(std::max(by_cols, by_cache), 1, batch);
}

template <typename T>
void add_channel_bias(T* out, const Tensor<T>& bias, std::size_t n,
                      std::size_t c, std::size_t hw) {
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out + (b * c + ch) * hw;
      const T v = bias[ch];
      for (std::size_t i = 0; i < hw; ++i) p[i] += v;
    }
  }
}

}  // namespace

template <typename T>
Forward<T, Conv2dCtx<T>> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                                const Tensor<T>& bias, int stride,
                                int padding) {
  require_rank4(input, "conv2d input");
  require_rank4(weight, "conv2d weight");
  require_conv_params(stride, padding, "conv2d");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) +
                     " expects " + std::to_string(weight.dim(1)) +
                     " input channels, input is " + shape_str(input.shape()));
  }
  ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  require_bias(bias, g.out_channels, "conv2d");
  const std::size_t padded_h = g.in_h + 2 * static_cast<std::size_t>(padding);
  const std::size_t padded_w = g.in_w + 2 * static_cast<std::size_t>(padding);
  if (g.kernel_h > padded_h || g.kernel_w > padded_w) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) +
                     " larger than padded input " + shape_str(input.shape()));
  }
  require_finite(input, "conv2d input");
  g.out_h = (padded_h - g.kernel_h) / static_cast<std::size_t>(stride) + 1;
  g.out_w = (padded_w - g.kernel_w) / static_cast<std::size_t>(stride) + 1;

  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t in_chw = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_hw = g.out_h * g.out_w;
  const std::size_t step = chunk_samples(g.batch, depth, out_hw);

  Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
  std::vector<T> cols(depth * step * out_hw);
  std::vector<T> out_mat(step > 1 ? g.out_channels * step * out_hw : 0);
  for (std::size_t b0 = 0; b0 < g.batch; b0 += step) {
    ConvGeometry sub = g;
    sub.batch = std::min(step, g.batch - b0);
    const std::size_t ncols = sub.batch * out_hw;
    im2col(input.data() + b0 * in_chw, sub, cols.data());
    T* dst = out.data() + b0 * g.out_channels * out_hw;
    if (sub.batch == 1) {
      gemm<T>(g.out_channels, ncols, depth, weight.data(), depth, cols.data(),
              ncols, dst, ncols, false);
    } else {
      gemm<T>(g.out_channels, ncols, depth, weight.data(), depth, cols.data(),
              ncols, out_mat.data(), ncols, false);
      channel_major_to_batch_major(out_mat.data(), sub.batch, g.out_channels,
                                   out_hw, dst);
    }
  }
  add_channel_bias(out.data(), bias, g.batch, g.out_channels, out_hw);
  require_finite(out, "conv2d output");
  return {std::move(out), Conv2dCtx<T>{g, input, weight}};
}

template <typename T>
ConvGrads<T> conv2d_backward(const Conv2dCtx<T>& ctx,
                             const Tensor<T>& grad_out) {
  const ConvGeometry& g = ctx.geo;
  const Shape expected{g.batch, g.out_channels, g.out_h, g.out_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out " +
                     shape_str(grad_out.shape()) + " does not match output " +
                     shape_str(expected));
  }
  const std::size_t depth = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t in_chw = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_hw = g.out_h * g.out_w;
  const std::size_t step = chunk_samples(g.batch, depth, out_hw);

  ConvGrads<T> grads;
  grads.bias = Tensor<T>({g.out_channels});
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const T* p = grad_out.data() + (b * g.out_channels + co) * out_hw;
      T s{0};
      for (std::size_t i = 0; i < out_hw; ++i) s += p[i];
      grads.bias[co] += s;
    }
  }

  std::vector<T> weight_t(depth * g.out_channels);
  transpose(g.out_channels, depth, ctx.weight.data(), weight_t.data());
  grads.weight = Tensor<T>(ctx.weight.shape());
  grads.input = Tensor<T>({g.batch, g.in_channels, g.in_h, g.in_w});

  std::vector<T> cols(depth * step * out_hw);
  std::vector<T> grad_cols(depth * step * out_hw);
  std::vector<T> gmat_buf(step > 1 ? g.out_channels * step * out_hw : 0);
  for (std::size_t b0 = 0; b0 < g.batch; b0 += step) {
    ConvGeometry sub = g;
    sub.batch = std::min(step, g.batch - b0);
    const std::size_t ncols = sub.batch * out_hw;
    const T* src = grad_out.data() + b0 * g.out_channels * out_hw;
    const T* gmat = src;
    if (sub.batch > 1) {
      batch_major_to_channel_major(src, sub.batch, g.out_channels, out_hw,
                                   gmat_buf.data());
      gmat = gmat_buf.data();
    }
    im2col(ctx.input.data() + b0 * in_chw, sub, cols.data());
    gemm_bt<T>(g.out_channels, depth, ncols, gmat, ncols, cols.data(), ncols,
               grads.weight.data(), depth, b0 > 0);
    gemm<T>(depth, ncols, g.out_channels, weight_t.data(), g.out_channels,
            gmat, ncols, grad_cols.data(), ncols, false);
    col2im(grad_cols.data(), sub, grads.input.data() + b0 * in_chw);
  }
  return grads;
}

template <typename T>
Forward<T, ConvTranspose2dCtx<T>> conv_transpose2d(const Tensor<T>& input,
                                                   const Tensor<T>& weight,
                                                   const Tensor<T>& bias,
                                                   int stride, int padding) {
  require_rank4(input, "conv_transpose2d input");
  require_rank4(weight, "conv_transpose2d weight");
  require_conv_params(stride, padding, "conv_transpose2d");
  if (weight.dim(0) != input.dim(1)) {
    throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) +
                     " expects " + std::to_string(weight.dim(0)) +
                     " input channels, input is " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t cin = input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  const std::size_t cout = weight.dim(1);
  const std::size_t kh = weight.dim(2);
  const std::size_t kw = weight.dim(3);
  require_bias(bias, cout, "conv_transpose2d");
  const long oh = (static_cast<long>(h) - 1) * stride - 2L * padding +
                  static_cast<long>(kh);
  const long ow = (static_cast<long>(w) - 1) * stride - 2L * padding +
                  static_cast<long>(kw);
  if (oh < 1 || ow < 1 || static_cast<long>(kh) <= padding ||
      static_cast<long>(kw) <= padding) {
    throw ShapeError("conv_transpose2d: kernel/stride/padding give no valid "
                     "output for input " + shape_str(input.shape()));
  }
  require_finite(input, "conv_transpose2d input");

  // Adjoint geometry: the transposed conv output is the "image" of a conv2d
  // whose output is this op's input.
  ConvGeometry g;
  g.batch = n;
  g.in_channels = cout;
  g.in_h = static_cast<std::size_t>(oh);
  g.in_w = static_cast<std::size_t>(ow);
  g.out_channels = cin;
  g.out_h = h;
  g.out_w = w;
  g.kernel_h = kh;
  g.kernel_w = kw;
  g.stride = stride;
  g.padding = padding;

  const std::size_t hw = h * w;
  const std::size_t ohw = g.in_h * g.in_w;
  const std::size_t depth = cout * kh * kw;
  const std::size_t step = chunk_samples(n, depth, hw);

  std::vector<T> weight_t(depth * cin);
  transpose(cin, depth, weight.data(), weight_t.data());

  Tensor<T> out({n, cout, g.in_h, g.in_w});
  std::vector<T> cols(depth * step * hw);
  std::vector<T> in_buf(step > 1 ? cin * step * hw : 0);
  for (std::size_t b0 = 0; b0 < n; b0 += step) {
    ConvGeometry sub = g;
    sub.batch = std::min(step, n - b0);
    const std::size_t ncols = sub.batch * hw;
    const T* src = input.data() + b0 * cin * hw;
    const T* in_mat = src;
    if (sub.batch > 1) {
      batch_major_to_channel_major(src, sub.batch, cin, hw, in_buf.data());
      in_mat = in_buf.data();
    }
    gemm<T>(depth, ncols, cin, weight_t.data(), cin, in_mat, ncols,
            cols.data(), ncols, false);
    col2im(cols.data(), sub, out.data() + b0 * cout * ohw);
  }
  add_channel_bias(out.data(), bias, n, cout, ohw);
  require_finite(out, "conv_transpose2d output");
  return {std::move(out), ConvTranspose2dCtx<T>{g, input, weight}};
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const ConvTranspose2dCtx<T>& ctx,
                                       const Tensor<T>& grad_out) {
  const ConvGeometry& g = ctx.geo;
  const Shape expected{g.batch, g.in_channels, g.in_h, g.in_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv_transpose2d_backward: grad_out " +
                     shape_str(grad_out.shape()) + " does not match output " +
                     shape_str(expected));
  }
  const std::size_t cin = g.out_channels;
  const std::size_t cout = g.in_channels;
  const std::size_t hw = g.out_h * g.out_w;
  const std::size_t ohw = g.in_h * g.in_w;
  const std::size_t depth = cout * g.kernel_h * g.kernel_w;
  const std::size_t step = chunk_samples(g.batch, depth, hw);

  ConvGrads<T> grads;
  grads.input = Tensor<T>({g.batch, cin, g.out_h, g.out_w});
  grads.weight = Tensor<T>(ctx.weight.shape());
  std::vector<T> gcols(depth * step * hw);
  std::vector<T> in_buf(step > 1 ? cin * step * hw : 0);
  std::vector<T> gin_buf(step > 1 ? cin * step * hw : 0);
  for (std::size_t b0 = 0; b0 < g.batch; b0 += step) {
    ConvGeometry sub = g;
    sub.batch = std::min(step, g.batch - b0);
    const std::size_t ncols = sub.batch * hw;
    im2col(grad_out.data() + b0 * cout * ohw, sub, gcols.data());
    T* gin = grads.input.data() + b0 * cin * hw;
    const T* src = ctx.input.data() + b0 * cin * hw;
    const T* in_mat = src;
    if (sub.batch > 1) {
      batch_major_to_channel_major(src, sub.batch, cin, hw, in_buf.data());
      in_mat = in_buf.data();
      gemm<T>(cin, ncols, depth, ctx.weight.data(), depth, gcols.data(), ncols,
              gin_buf.data(), ncols, false);
      channel_major_to_batch_major(gin_buf.data(), sub.batch, cin, hw, gin);
    } else {
      gemm<T>(cin, ncols, depth, ctx.weight.data(), depth, gcols.data(), ncols,
              gin, ncols, false);
    }
    gemm_bt<T>(cin, depth, ncols, in_mat, ncols, gcols.data(), ncols,
               grads.weight.data(), depth, b0 > 0);
  }

  grads.bias = Tensor<T>({cout});
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T* p = grad_out.data() + (b * cout + co) * ohw;
      T s{0};
      for (std::size_t i = 0; i < ohw; ++i) s += p[i];
      grads.bias[co] += s;
    }
  }
  return grads;
}

#define STARBRI_INSTANTIATE_CONV(T)                                          \
  template void require_finite<T>(const Tensor<T>&, const char*);           \
  template void im2col<T>(const T*, const ConvGeometry&, T*);               \
  template void col2im<T>(const T*, const ConvGeometry&, T*);               \
  template Forward<T, Conv2dCtx<T>> conv2d<T>(                              \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
  template ConvGrads<T> conv2d_backward<T>(const Conv2dCtx<T>&,             \
                                           const Tensor<T>&);               \
  template Forward<T, ConvTranspose2dCtx<T>> conv_transpose2d<T>(           \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
  template ConvGrads<T> conv_transpose2d_backward<T>(                       \
      const ConvTranspose2dCtx<T>&, const Tensor<T>&);

STARBRI_INSTANTIATE_CONV(float)
STARBRI_INSTANTIATE_CONV(double)

}  // namespace starbri
