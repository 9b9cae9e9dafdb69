#include <algorithm>
#include <cmath>
#include <string>

#include "starbri/ops.hpp"

namespace starbri {

namespace {

bool is_binary(Pointwise kind) {
  return kind == Pointwise::Add || kind == Pointwise::Hadamard;
}

const char* kind_name(Pointwise kind) {
  switch (kind) {
    case Pointwise::Sigmoid: return "sigmoid";
    case Pointwise::Tanh: return "tanh";
    case Pointwise::Add: return "add";
    case Pointwise::Hadamard: return "hadamard";
  }
  return "?";
}

template <typename T>
void require_nchw(const Tensor<T>& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected NCHW tensor, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

template <typename T>
Forward<T, ElementwiseCtx<T>> elementwise(Pointwise kind, const Tensor<T>& a) {
  if (is_binary(kind)) {
    throw ShapeError(std::string("elementwise: ") + kind_name(kind) +
                     " needs two operands");
  }
  require_finite(a, "elementwise input");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  if (kind == Pointwise::Sigmoid) {
    for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(a[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
  }
  ElementwiseCtx<T> ctx;
  ctx.kind = kind;
  ctx.shape = a.shape();
  ctx.out = out;
  return {std::move(out), std::move(ctx)};
}

template <typename T>
Forward<T, ElementwiseCtx<T>> elementwise(Pointwise kind, const Tensor<T>& a,
                                          const Tensor<T>& b) {
  if (!is_binary(kind)) {
    throw ShapeError(std::string("elementwise: ") + kind_name(kind) +
                     " takes one operand");
  }
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string("elementwise ") + kind_name(kind) +
                     ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  require_finite(a, "elementwise lhs");
  require_finite(b, "elementwise rhs");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  ElementwiseCtx<T> ctx;
  ctx.kind = kind;
  ctx.shape = a.shape();
  if (kind == Pointwise::Add) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    ctx.a = a;
    ctx.b = b;
  }
  require_finite(out, "elementwise output");
  return {std::move(out), std::move(ctx)};
}

template <typename T>
ElementwiseGrads<T> elementwise_backward(const ElementwiseCtx<T>& ctx,
                                         const Tensor<T>& grad_out) {
  if (grad_out.shape() != ctx.shape) {
    throw ShapeError("elementwise_backward: grad_out " +
                     shape_str(grad_out.shape()) + " does not match " +
                     shape_str(ctx.shape));
  }
  const std::size_t n = grad_out.numel();
  ElementwiseGrads<T> g;
  switch (ctx.kind) {
    case Pointwise::Sigmoid:
      g.a = Tensor<T>(ctx.shape);
      for (std::size_t i = 0; i < n; ++i) {
        const T y = ctx.out[i];
        g.a[i] = grad_out[i] * y * (T(1) - y);
      }
      break;
    case Pointwise::Tanh:
      g.a = Tensor<T>(ctx.shape);
      for (std::size_t i = 0; i < n; ++i) {
        const T y = ctx.out[i];
        g.a[i] = grad_out[i] * (T(1) - y * y);
      }
      break;
    case Pointwise::Add:
      g.a = grad_out;
      g.b = grad_out;
      break;
    case Pointwise::Hadamard:
      g.a = Tensor<T>(ctx.shape);
      g.b = Tensor<T>(ctx.shape);
      for (std::size_t i = 0; i < n; ++i) {
        g.a[i] = grad_out[i] * ctx.b[i];
        g.b[i] = grad_out[i] * ctx.a[i];
      }
      break;
  }
  return g;
}

template <typename T>
Forward<T, ConcatCtx> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  for (const auto& p : parts) require_nchw(p, "concat_channels");
  const std::size_t n = parts[0].dim(0);
  const std::size_t h = parts[0].dim(2);
  const std::size_t w = parts[0].dim(3);
  ConcatCtx ctx;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: part " + shape_str(p.shape()) +
                       " incompatible with " + shape_str(parts[0].shape()));
    }
    ctx.sizes.push_back(p.dim(1));
    total += p.dim(1);
  }
  const std::size_t hw = h * w;
  Tensor<T> out({n, total, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    T* dst = out.data() + b * total * hw;
    for (const auto& p : parts) {
      const std::size_t chunk = p.dim(1) * hw;
      std::copy_n(p.data() + b * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return {std::move(out), std::move(ctx)};
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& input,
                                      std::span<const std::size_t> sizes) {
  require_nchw(input, "split_channels");
  std::size_t total = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw ShapeError("split_channels: zero-sized part");
    total += s;
  }
  if (total != input.dim(1)) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                     " but input has " + std::to_string(input.dim(1)) +
                     " channels");
  }
  const std::size_t n = input.dim(0);
  const std::size_t hw = input.dim(2) * input.dim(3);
  std::vector<Tensor<T>> parts;
  parts.reserve(sizes.size());
  for (std::size_t s : sizes) {
    parts.emplace_back(Shape{n, s, input.dim(2), input.dim(3)});
  }
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = input.data() + b * total * hw;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const std::size_t chunk = sizes[i] * hw;
      std::copy_n(src, chunk, parts[i].data() + b * chunk);
      src += chunk;
    }
  }
  return parts;
}

template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const ConcatCtx& ctx,
                                                const Tensor<T>& grad_out) {
  return split_channels<T>(grad_out, ctx.sizes);
}

template <typename T>
Tensor<T> split_channels_backward(std::span<const Tensor<T>> grad_parts) {
  return concat_channels<T>(grad_parts).out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& input, std::size_t begin,
                      std::size_t count) {
  if (input.rank() == 0 || count == 0 || begin + count > input.dim(0)) {
    throw ShapeError("slice_batch: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " +
                     shape_str(input.shape()));
  }
  Shape shape = input.shape();
  shape[0] = count;
  const std::size_t inner = input.numel() / input.dim(0);
  std::vector<T> data(input.data() + begin * inner,
                      input.data() + (begin + count) * inner);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack_batch: no parts");
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("stack_batch: part " + shape_str(p.shape()) +
                       " incompatible with " + shape_str(shape));
    }
    total += p.dim(0);
  }
  shape[0] = total;
  std::vector<T> data;
  data.reserve(shape_numel(shape));
  for (const auto& p : parts) data.insert(data.end(), p.data(), p.data() + p.numel());
  return Tensor<T>(std::move(shape), std::move(data));
}

#define STARBRI_INSTANTIATE_POINTWISE(T)                                      \
  template Forward<T, ElementwiseCtx<T>> elementwise<T>(Pointwise,           \
                                                        const Tensor<T>&);   \
  template Forward<T, ElementwiseCtx<T>> elementwise<T>(                     \
      Pointwise, const Tensor<T>&, const Tensor<T>&);                        \
  template ElementwiseGrads<T> elementwise_backward<T>(                      \
      const ElementwiseCtx<T>&, const Tensor<T>&);                           \
  template Forward<T, ConcatCtx> concat_channels<T>(                         \
      std::span<const Tensor<T>>);                                           \
  template std::vector<Tensor<T>> concat_channels_backward<T>(               \
      const ConcatCtx&, const Tensor<T>&);                                   \
  template std::vector<Tensor<T>> split_channels<T>(                         \
      const Tensor<T>&, std::span<const std::size_t>);                       \
  template Tensor<T> split_channels_backward<T>(std::span<const Tensor<T>>); \
  template Tensor<T> slice_batch<T>(const Tensor<T>&, std::size_t,           \
                                    std::size_t);                            \
  template Tensor<T> stack_batch<T>(std::span<const Tensor<T>>);

STARBRI_INSTANTIATE_POINTWISE(float)
STARBRI_INSTANTIATE_POINTWISE(double)

}  // namespace starbri
