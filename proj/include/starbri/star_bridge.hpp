#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "starbri/ops.hpp"

namespace starbri {

/// 1x1 fusion over the concatenated hidden outputs of all L layers,
/// followed by group normalization. Maps L*Chid -> L*Chid channels.
template <typename T>
struct BridgeParams {
  Tensor<T> w1;  // [L*Chid, L*Chid, 1, 1]
  Tensor<T> b1;  // [L*Chid]
  Tensor<T> gamma;
  Tensor<T> beta;
  std::size_t layers = 1;
  std::size_t channels_per_group = 16;

  std::size_t hidden_channels() const { return b1.numel() / layers; }

  static BridgeParams zeros(std::size_t layers, std::size_t hidden,
                            std::size_t channels_per_group = 16);
  static BridgeParams init(std::size_t layers, std::size_t hidden,
                           std::size_t channels_per_group,
                           std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f("w1", self.w1);
    f("b1", self.b1);
    f("gn.gamma", self.gamma);
    f("gn.beta", self.beta);
  }
};

/// Residuals to add to each layer's input at the next step. Empty before
/// the first bridge step.
template <typename T>
struct BridgeState {
  std::vector<Tensor<T>> residuals;

  bool empty() const { return residuals.empty(); }
};

template <typename T>
struct BridgeCtx {
  ConcatCtx concat;
  Conv2dCtx<T> fuse;
  GroupNormCtx<T> norm;
  std::vector<std::size_t> sizes;
};

template <typename T>
struct BridgeGrads {
  std::vector<Tensor<T>> hidden;
  BridgeParams<T> params;
};

template <typename T>
std::pair<BridgeState<T>, BridgeCtx<T>> bridge_step(
    std::span<const Tensor<T>> hidden, const BridgeParams<T>& params);

/// `grad_residuals` holds one gradient per residual; absent entries count as
/// zero.
template <typename T>
BridgeGrads<T> bridge_step_backward(const BridgeCtx<T>& ctx,
                                    const BridgeParams<T>& params,
                                    std::span<const Tensor<T>> grad_residuals);

/// x_l + residual_l for every layer; identity when the state is empty.
template <typename T>
std::vector<Tensor<T>> apply_bridge(std::span<const Tensor<T>> layer_inputs,
                                    const BridgeState<T>& state);

}  // namespace starbri
