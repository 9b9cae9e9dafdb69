#include "starbri/star_bridge.hpp"

#include <cmath>
#include <string>

namespace starbri {

template <typename T>
BridgeParams<T> BridgeParams<T>::zeros(std::size_t layers, std::size_t hidden,
                                       std::size_t channels_per_group) {
  if (layers == 0 || hidden == 0) {
    throw ShapeError("bridge needs at least one layer and one channel");
  }
  const std::size_t total = layers * hidden;
  BridgeParams p;
  p.w1 = Tensor<T>({total, total, 1, 1});
  p.b1 = Tensor<T>({total});
  p.gamma = Tensor<T>({total});
  p.beta = Tensor<T>({total});
  p.layers = layers;
  p.channels_per_group = channels_per_group;
  return p;
}

template <typename T>
BridgeParams<T> BridgeParams<T>::init(std::size_t layers, std::size_t hidden,
                                      std::size_t channels_per_group,
                                      std::mt19937_64& rng) {
  BridgeParams p = zeros(layers, hidden, channels_per_group);
  const double bound = 1.0 / std::sqrt(static_cast<double>(layers * hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.w1.values()) v = static_cast<T>(dist(rng));
  p.gamma.fill(T(1));
  return p;
}

template <typename T>
std::pair<BridgeState<T>, BridgeCtx<T>> bridge_step(
    std::span<const Tensor<T>> hidden, const BridgeParams<T>& params) {
  if (hidden.empty()) throw ShapeError("bridge_step: no layers");
  if (hidden.size() != params.layers) {
    throw ShapeError("bridge_step: params built for " +
                     std::to_string(params.layers) + " layers, got " +
                     std::to_string(hidden.size()));
  }
  for (const auto& h : hidden) {
    if (h.shape() != hidden[0].shape()) {
      throw ShapeError("bridge_step: layer outputs differ in shape (" +
                       shape_str(h.shape()) + " vs " +
                       shape_str(hidden[0].shape()) + ")");
    }
  }
  BridgeCtx<T> ctx;
  auto cat = concat_channels<T>(hidden);
  ctx.concat = std::move(cat.ctx);
  auto z = conv2d(cat.out, params.w1, params.b1, 1, 0);
  ctx.fuse = std::move(z.ctx);
  const std::size_t total = z.out.dim(1);
  auto n = group_norm(z.out, group_count(total, params.channels_per_group),
                      params.gamma, params.beta);
  ctx.norm = std::move(n.ctx);
  ctx.sizes = ctx.concat.sizes;
  BridgeState<T> state;
  state.residuals = split_channels<T>(n.out, ctx.sizes);
  return {std::move(state), std::move(ctx)};
}

template <typename T>
BridgeGrads<T> bridge_step_backward(const BridgeCtx<T>& ctx,
                                    const BridgeParams<T>& params,
                                    std::span<const Tensor<T>> grad_residuals) {
  if (grad_residuals.size() != ctx.sizes.size()) {
    throw ShapeError("bridge_step_backward: expected " +
                     std::to_string(ctx.sizes.size()) + " residual gradients");
  }
  const Shape& full = ctx.norm.xhat.shape();
  std::vector<Tensor<T>> parts;
  parts.reserve(grad_residuals.size());
  for (std::size_t l = 0; l < grad_residuals.size(); ++l) {
    if (grad_residuals[l].empty()) {
      parts.emplace_back(Shape{full[0], ctx.sizes[l], full[2], full[3]});
    } else {
      parts.push_back(grad_residuals[l]);
    }
  }
  const Tensor<T> dz = split_channels_backward<T>(parts);
  auto g_norm = group_norm_backward(ctx.norm, dz);
  auto g_conv = conv2d_backward(ctx.fuse, g_norm.input);

  BridgeGrads<T> grads;
  grads.hidden = concat_channels_backward(ctx.concat, g_conv.input);
  grads.params.layers = params.layers;
  grads.params.channels_per_group = params.channels_per_group;
  grads.params.w1 = std::move(g_conv.weight);
  grads.params.b1 = std::move(g_conv.bias);
  grads.params.gamma = std::move(g_norm.gamma);
  grads.params.beta = std::move(g_norm.beta);
  return grads;
}

template <typename T>
std::vector<Tensor<T>> apply_bridge(std::span<const Tensor<T>> layer_inputs,
                                    const BridgeState<T>& state) {
  std::vector<Tensor<T>> out(layer_inputs.begin(), layer_inputs.end());
  if (state.empty()) return out;
  if (state.residuals.size() != layer_inputs.size()) {
    throw ShapeError("apply_bridge: " + std::to_string(layer_inputs.size()) +
                     " inputs but " + std::to_string(state.residuals.size()) +
                     " residuals");
  }
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (state.residuals[l].shape() != out[l].shape()) {
      throw ShapeError("apply_bridge: residual " +
                       shape_str(state.residuals[l].shape()) +
                       " does not match layer input " +
                       shape_str(out[l].shape()));
    }
    out[l] += state.residuals[l];
  }
  return out;
}

template struct BridgeParams<float>;
template struct BridgeParams<double>;
template std::pair<BridgeState<float>, BridgeCtx<float>> bridge_step<float>(
    std::span<const Tensor<float>>, const BridgeParams<float>&);
template std::pair<BridgeState<double>, BridgeCtx<double>> bridge_step<double>(
    std::span<const Tensor<double>>, const BridgeParams<double>&);
template BridgeGrads<float> bridge_step_backward<float>(
    const BridgeCtx<float>&, const BridgeParams<float>&,
    std::span<const Tensor<float>>);
template BridgeGrads<double> bridge_step_backward<double>(
    const BridgeCtx<double>&, const BridgeParams<double>&,
    std::span<const Tensor<double>>);
template std::vector<Tensor<float>> apply_bridge<float>(
    std::span<const Tensor<float>>, const BridgeState<float>&);
template std::vector<Tensor<double>> apply_bridge<double>(
    std::span<const Tensor<double>>, const BridgeState<double>&);

}  // namespace starbri
