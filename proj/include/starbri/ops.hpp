#pragma once

// Differentiable kernels over NCHW tensors. Every forward returns its output
// together with a context that the paired *_backward consumes.

#include <cstddef>
#include <span>
#include <vector>

#include "starbri/tensor.hpp"

namespace starbri {

// Scans kernel inputs and outputs for NaN/Inf and throws NumericError. On by
// default; timed training runs switch it off.
bool finite_checks_enabled() noexcept;
void set_finite_checks(bool enabled) noexcept;

template <typename T>
void require_finite(const Tensor<T>& t, const char* where);

template <typename T, typename Ctx>
struct Forward {
  Tensor<T> out;
  Ctx ctx;
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_channels = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  int stride = 1;
  int padding = 0;
};

template <typename T>
struct Conv2dCtx {
  ConvGeometry geo;
  Tensor<T> input;   // im2col is recomputed per chunk in backward
  Tensor<T> weight;  // [Cout, Cin, Kh, Kw]
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Forward<T, Conv2dCtx<T>> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                                const Tensor<T>& bias, int stride, int padding);

template <typename T>
ConvGrads<T> conv2d_backward(const Conv2dCtx<T>& ctx,
                             const Tensor<T>& grad_out);

template <typename T>
struct ConvTranspose2dCtx {
  ConvGeometry geo;  // in_* describe the transposed-conv input
  Tensor<T> input;      // [N, Cin, H, W]
  Tensor<T> weight;     // [Cin, Cout, Kh, Kw]
};

// Weight layout is [Cin, Cout, Kh, Kw]; output size (H-1)*stride - 2*pad + K.
template <typename T>
Forward<T, ConvTranspose2dCtx<T>> conv_transpose2d(const Tensor<T>& input,
                                                   const Tensor<T>& weight,
                                                   const Tensor<T>& bias,
                                                   int stride, int padding);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const ConvTranspose2dCtx<T>& ctx,
                                       const Tensor<T>& grad_out);

// Raw im2col / col2im over an NCHW batch; columns are indexed
// n*H'*W' + y*W' + x.
template <typename T>
void im2col(const T* image, const ConvGeometry& geo, T* cols);
template <typename T>
void col2im(const T* cols, const ConvGeometry& geo, T* image);

// ---------------------------------------------------------------------------
// Group normalization

template <typename T>
struct GroupNormCtx {
  std::size_t groups = 1;
  Tensor<T> xhat;
  std::vector<T> rstd;  // one per (sample, group)
  Tensor<T> gamma;
};

template <typename T>
struct GroupNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
Forward<T, GroupNormCtx<T>> group_norm(const Tensor<T>& input,
                                       std::size_t num_groups,
                                       const Tensor<T>& gamma,
                                       const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
GroupNormGrads<T> group_norm_backward(const GroupNormCtx<T>& ctx,
                                      const Tensor<T>& grad_out);

// Number of groups for `channels` when each group should hold
// `channels_per_group` channels: the largest divisor of `channels` not above
// channels / channels_per_group, and at least 1.
std::size_t group_count(std::size_t channels, std::size_t channels_per_group);

// ---------------------------------------------------------------------------
// Pointwise

enum class Pointwise { Sigmoid, Tanh, Add, Hadamard };

template <typename T>
struct ElementwiseCtx {
  Pointwise kind = Pointwise::Add;
  Tensor<T> a;    // Hadamard: left operand
  Tensor<T> b;    // Hadamard: right operand
  Tensor<T> out;  // Sigmoid / Tanh: activation output
  Shape shape;
};

template <typename T>
struct ElementwiseGrads {
  Tensor<T> a;
  Tensor<T> b;  // empty for unary kinds
};

template <typename T>
Forward<T, ElementwiseCtx<T>> elementwise(Pointwise kind, const Tensor<T>& a);
template <typename T>
Forward<T, ElementwiseCtx<T>> elementwise(Pointwise kind, const Tensor<T>& a,
                                          const Tensor<T>& b);
template <typename T>
ElementwiseGrads<T> elementwise_backward(const ElementwiseCtx<T>& ctx,
                                         const Tensor<T>& grad_out);

template <typename T>
T sigmoid(T x) noexcept {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

// ---------------------------------------------------------------------------
// Channel concatenation / split

struct ConcatCtx {
  std::vector<std::size_t> sizes;
};

template <typename T>
Forward<T, ConcatCtx> concat_channels(std::span<const Tensor<T>> parts);

template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const ConcatCtx& ctx,
                                                const Tensor<T>& grad_out);

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& input,
                                      std::span<const std::size_t> sizes);

// Gradient of split_channels: the incoming per-part gradients concatenated.
template <typename T>
Tensor<T> split_channels_backward(std::span<const Tensor<T>> grad_parts);

// Slices [begin, begin+count) along axis 0.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& input, std::size_t begin,
                      std::size_t count);

// Stacks tensors of identical shape [N,...] along axis 0.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts);

}  // namespace starbri
