#include "starbri/convlstm.hpp"

#include <array>
#include <cmath>
#include <string>

namespace starbri {

namespace {

template <typename T>
void fill_uniform(Tensor<T>& t, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
ConvLSTMParams<T> ConvLSTMParams<T>::zeros(std::size_t in_channels,
                                           std::size_t hidden,
                                           std::size_t kernel_h,
                                           std::size_t kernel_w,
                                           std::size_t channels_per_group) {
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw ShapeError("ConvLSTM kernel must be odd for same padding");
  }
  ConvLSTMParams p;
  const std::size_t cat = in_channels + hidden;
  p.wg = Tensor<T>({3 * hidden, cat, kernel_h, kernel_w});
  p.bg = Tensor<T>({3 * hidden});
  p.wc = Tensor<T>({hidden, cat, kernel_h, kernel_w});
  p.bc = Tensor<T>({hidden});
  p.gn_g_gamma = Tensor<T>({3 * hidden});
  p.gn_g_beta = Tensor<T>({3 * hidden});
  p.gn_c_gamma = Tensor<T>({hidden});
  p.gn_c_beta = Tensor<T>({hidden});
  p.channels_per_group = channels_per_group;
  return p;
}

template <typename T>
ConvLSTMParams<T> ConvLSTMParams<T>::init(std::size_t in_channels,
                                          std::size_t hidden,
                                          std::size_t kernel_h,
                                          std::size_t kernel_w,
                                          std::size_t channels_per_group,
                                          std::mt19937_64& rng) {
  ConvLSTMParams p =
      zeros(in_channels, hidden, kernel_h, kernel_w, channels_per_group);
  const T bound = static_cast<T>(
      1.0 / std::sqrt(static_cast<double>((in_channels + hidden) * kernel_h *
                                          kernel_w)));
  fill_uniform(p.wg, bound, rng);
  fill_uniform(p.wc, bound, rng);
  p.gn_g_gamma.fill(T(1));
  p.gn_c_gamma.fill(T(1));
  return p;
}

template <typename T>
std::pair<CellState<T>, CellCtx<T>> cell_step(const Tensor<T>& x,
                                              const CellState<T>& prev,
                                              const ConvLSTMParams<T>& params) {
  const std::size_t hidden = params.hidden_channels();
  if (x.rank() != 4 || prev.h.rank() != 4 || prev.c.rank() != 4) {
    throw ShapeError("cell_step: x and state must be NCHW");
  }
  if (x.dim(0) != prev.h.dim(0) || x.dim(2) != prev.h.dim(2) ||
      x.dim(3) != prev.h.dim(3)) {
    throw ShapeError("cell_step: input " + shape_str(x.shape()) +
                     " does not match state " + shape_str(prev.h.shape()));
  }
  if (prev.h.shape() != prev.c.shape()) {
    throw ShapeError("cell_step: h " + shape_str(prev.h.shape()) +
                     " and c " + shape_str(prev.c.shape()) + " differ");
  }
  if (x.dim(1) != params.input_channels() || prev.h.dim(1) != hidden) {
    throw ShapeError("cell_step: params expect " +
                     std::to_string(params.input_channels()) + "+" +
                     std::to_string(hidden) + " channels, got " +
                     std::to_string(x.dim(1)) + "+" +
                     std::to_string(prev.h.dim(1)));
  }
  const int pad_h = static_cast<int>(params.kernel_h() / 2);
  const int pad_w = static_cast<int>(params.kernel_w() / 2);
  if (pad_h != pad_w) {
    throw ShapeError("cell_step: non-square kernels are not supported");
  }

  CellCtx<T> ctx;
  ctx.hidden = hidden;
  const std::array<Tensor<T>, 2> parts{x, prev.h};
  auto cat = concat_channels<T>(parts);
  ctx.concat = std::move(cat.ctx);

  auto zg = conv2d(cat.out, params.wg, params.bg, 1, pad_h);
  ctx.gate_conv = std::move(zg.ctx);
  auto ng = group_norm(zg.out, group_count(3 * hidden, params.channels_per_group),
                       params.gn_g_gamma, params.gn_g_beta);
  ctx.gate_norm = std::move(ng.ctx);
  auto gates = elementwise(Pointwise::Sigmoid, ng.out);
  ctx.gate_act = std::move(gates.ctx);
  const std::array<std::size_t, 3> sizes{hidden, hidden, hidden};
  auto fio = split_channels<T>(gates.out, sizes);

  auto zc = conv2d(cat.out, params.wc, params.bc, 1, pad_h);
  ctx.cand_conv = std::move(zc.ctx);
  auto nc = group_norm(zc.out, group_count(hidden, params.channels_per_group),
                       params.gn_c_gamma, params.gn_c_beta);
  ctx.cand_norm = std::move(nc.ctx);
  auto cand = elementwise(Pointwise::Tanh, nc.out);
  ctx.cand_act = std::move(cand.ctx);

  auto fc = elementwise(Pointwise::Hadamard, fio[0], prev.c);
  ctx.forget_mul = std::move(fc.ctx);
  auto ic = elementwise(Pointwise::Hadamard, fio[1], cand.out);
  ctx.input_mul = std::move(ic.ctx);
  Tensor<T> c = std::move(fc.out);
  c += ic.out;
  auto tc = elementwise(Pointwise::Tanh, c);
  ctx.memory_act = std::move(tc.ctx);
  auto h = elementwise(Pointwise::Hadamard, fio[2], tc.out);
  ctx.output_mul = std::move(h.ctx);

  return {CellState<T>{std::move(h.out), std::move(c)}, std::move(ctx)};
}

template <typename T>
CellGrads<T> cell_step_backward(const CellCtx<T>& ctx,
                                const ConvLSTMParams<T>& params,
                                const Tensor<T>& grad_h,
                                const Tensor<T>& grad_c) {
  const Shape& state_shape = ctx.forget_mul.shape;
  Tensor<T> dh = grad_h.empty() ? Tensor<T>(state_shape) : grad_h;
  Tensor<T> dc = grad_c.empty() ? Tensor<T>(state_shape) : grad_c;
  if (dh.shape() != state_shape || dc.shape() != state_shape) {
    throw ShapeError("cell_step_backward: gradient shape mismatch");
  }

  // h = o . tanh(c)
  auto g_out = elementwise_backward(ctx.output_mul, dh);
  auto g_tc = elementwise_backward(ctx.memory_act, g_out.b);
  dc += g_tc.a;

  // c = f . c_prev + i . cand
  auto g_f = elementwise_backward(ctx.forget_mul, dc);
  auto g_i = elementwise_backward(ctx.input_mul, dc);

  CellGrads<T> grads;
  grads.prev.c = std::move(g_f.b);
  grads.params = ConvLSTMParams<T>{};
  grads.params.channels_per_group = params.channels_per_group;

  auto g_cand = elementwise_backward(ctx.cand_act, g_i.b);
  auto g_nc = group_norm_backward(ctx.cand_norm, g_cand.a);
  auto g_zc = conv2d_backward(ctx.cand_conv, g_nc.input);

  const std::array<Tensor<T>, 3> dgates{std::move(g_f.a), std::move(g_i.a),
                                        std::move(g_out.a)};
  auto d_gate_act = split_channels_backward<T>(dgates);
  auto g_gates = elementwise_backward(ctx.gate_act, d_gate_act);
  auto g_ng = group_norm_backward(ctx.gate_norm, g_gates.a);
  auto g_zg = conv2d_backward(ctx.gate_conv, g_ng.input);

  Tensor<T> dcat = std::move(g_zg.input);
  dcat += g_zc.input;
  auto dparts = concat_channels_backward(ctx.concat, dcat);
  grads.x = std::move(dparts[0]);
  grads.prev.h = std::move(dparts[1]);

  grads.params.wg = std::move(g_zg.weight);
  grads.params.bg = std::move(g_zg.bias);
  grads.params.wc = std::move(g_zc.weight);
  grads.params.bc = std::move(g_zc.bias);
  grads.params.gn_g_gamma = std::move(g_ng.gamma);
  grads.params.gn_g_beta = std::move(g_ng.beta);
  grads.params.gn_c_gamma = std::move(g_nc.gamma);
  grads.params.gn_c_beta = std::move(g_nc.beta);
  return grads;
}

template struct ConvLSTMParams<float>;
template struct ConvLSTMParams<double>;
template std::pair<CellState<float>, CellCtx<float>> cell_step<float>(
    const Tensor<float>&, const CellState<float>&,
    const ConvLSTMParams<float>&);
template std::pair<CellState<double>, CellCtx<double>> cell_step<double>(
    const Tensor<double>&, const CellState<double>&,
    const ConvLSTMParams<double>&);
template CellGrads<float> cell_step_backward<float>(
    const CellCtx<float>&, const ConvLSTMParams<float>&, const Tensor<float>&,
    const Tensor<float>&);
template CellGrads<double> cell_step_backward<double>(
    const CellCtx<double>&, const ConvLSTMParams<double>&,
    const Tensor<double>&, const Tensor<double>&);

}  // namespace starbri
