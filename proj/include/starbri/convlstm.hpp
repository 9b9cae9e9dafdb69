#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "starbri/ops.hpp"

namespace starbri {

/// Parameters of one ConvLSTM cell. The joint gate convolution emits
/// 3*hidden channels in (forget, input, output) order; the candidate
/// convolution emits `hidden` channels. Both read the channel concatenation
/// [x, h_prev] and are followed by group normalization.
template <typename T>
struct ConvLSTMParams {
  Tensor<T> wg;  // [3*Chid, Cin+Chid, Kh, Kw]
  Tensor<T> bg;  // [3*Chid]
  Tensor<T> wc;  // [Chid, Cin+Chid, Kh, Kw]
  Tensor<T> bc;  // [Chid]
  Tensor<T> gn_g_gamma, gn_g_beta;  // [3*Chid]
  Tensor<T> gn_c_gamma, gn_c_beta;  // [Chid]
  std::size_t channels_per_group = 16;

  std::size_t hidden_channels() const { return wc.dim(0); }
  std::size_t input_channels() const { return wc.dim(1) - wc.dim(0); }
  std::size_t kernel_h() const { return wc.dim(2); }
  std::size_t kernel_w() const { return wc.dim(3); }

  /// Every tensor (including group-norm gammas) set to zero.
  static ConvLSTMParams zeros(std::size_t in_channels, std::size_t hidden,
                              std::size_t kernel_h, std::size_t kernel_w,
                              std::size_t channels_per_group = 16);

  /// Conv weights ~ U(-k, k) with k = 1/sqrt(fan_in); biases and betas
  /// zero, gammas one.
  static ConvLSTMParams init(std::size_t in_channels, std::size_t hidden,
                             std::size_t kernel_h, std::size_t kernel_w,
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
    f("wg", self.wg);
    f("bg", self.bg);
    f("wc", self.wc);
    f("bc", self.bc);
    f("gn_g.gamma", self.gn_g_gamma);
    f("gn_g.beta", self.gn_g_beta);
    f("gn_c.gamma", self.gn_c_gamma);
    f("gn_c.beta", self.gn_c_beta);
  }
};

template <typename T>
struct CellState {
  Tensor<T> h;  // cell output
  Tensor<T> c;  // cell memory

  static CellState zeros(std::size_t batch, std::size_t hidden,
                         std::size_t height, std::size_t width) {
    return {Tensor<T>({batch, hidden, height, width}),
            Tensor<T>({batch, hidden, height, width})};
  }
};

template <typename T>
struct CellCtx {
  ConcatCtx concat;
  Conv2dCtx<T> gate_conv;
  GroupNormCtx<T> gate_norm;
  ElementwiseCtx<T> gate_act;
  Conv2dCtx<T> cand_conv;
  GroupNormCtx<T> cand_norm;
  ElementwiseCtx<T> cand_act;
  ElementwiseCtx<T> forget_mul;
  ElementwiseCtx<T> input_mul;
  ElementwiseCtx<T> memory_act;
  ElementwiseCtx<T> output_mul;
  std::size_t hidden = 0;
};

template <typename T>
struct CellGrads {
  Tensor<T> x;
  CellState<T> prev;
  ConvLSTMParams<T> params;
};

/// One time step:
///   [f, i, o] = sigmoid(GN(Wg * [x, h_prev] + bg))
///   c = f . c_prev + i . tanh(GN(Wc * [x, h_prev] + bc))
///   h = o . tanh(c)
template <typename T>
std::pair<CellState<T>, CellCtx<T>> cell_step(const Tensor<T>& x,
                                              const CellState<T>& prev,
                                              const ConvLSTMParams<T>& params);

/// Backward of cell_step. Either upstream gradient may be absent (empty),
/// meaning zero.
template <typename T>
CellGrads<T> cell_step_backward(const CellCtx<T>& ctx,
                                const ConvLSTMParams<T>& params,
                                const Tensor<T>& grad_h,
                                const Tensor<T>& grad_c);

}  // namespace starbri
