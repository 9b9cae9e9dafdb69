#include "starbri/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace starbri {

RouteStats route_stats(const RadarSequence& seq, std::size_t frames) {
  const std::size_t len =
      frames == 0 ? seq.length() : std::min(frames, seq.length());
  if (len < 2) {
    throw std::invalid_argument("route: need at least 2 frames, got " +
                                std::to_string(len));
  }
  std::vector<double> means(len);
  double total = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    double s = 0.0;
    for (float v : seq.frame(t)) s += v;
    means[t] = s / static_cast<double>(seq.frame_size());
    total += means[t];
  }
  RouteStats st;
  st.mu = total / static_cast<double>(len);
  double d = 0.0;
  for (std::size_t t = 0; t + 1 < len; ++t) d += std::abs(means[t + 1] - means[t]);
  st.delta = d / static_cast<double>(len - 1);
  return st;
}

Route classify(const RouteStats& s, const RouteThresholds& th) {
  if (s.mu <= th.m1 && s.delta <= th.d1) return Route::Light;
  if (s.mu <= th.m2 && s.delta <= th.d2) return Route::Moderate;
  return Route::Heavy;
}

Route route(const RadarSequence& seq, const NetworkConfig& cfg) {
  return classify(route_stats(seq, cfg.context), cfg.route_thresholds);
}

RadarSequence persistence_baseline(const RadarSequence& seq,
                                   std::size_t horizon) {
  if (seq.length() == 0) {
    throw std::invalid_argument("persistence_baseline: empty sequence");
  }
  if (horizon == 0) {
    throw std::invalid_argument("persistence_baseline: horizon must be >= 1");
  }
  const auto last = seq.frame(seq.length() - 1);
  std::vector<float> data;
  data.reserve(horizon * last.size());
  for (std::size_t t = 0; t < horizon; ++t) {
    data.insert(data.end(), last.begin(), last.end());
  }
  RadarSequence out;
  out.frames =
      Tensor<float>({horizon, seq.height(), seq.width()}, std::move(data));
  out.origin = seq.origin;
  out.source_id = seq.source_id;
  return out;
}

template <typename T>
Tensor<T> time_major_batch(std::span<const RadarSequence* const> seqs,
                           std::size_t first, std::size_t frames) {
  if (seqs.empty()) throw std::invalid_argument("time_major_batch: no sequences");
  const std::size_t n = seqs.size();
  const std::size_t h = seqs[0]->height();
  const std::size_t w = seqs[0]->width();
  Tensor<T> out({frames, n, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    const RadarSequence& s = *seqs[b];
    if (s.height() != h || s.width() != w || first + frames > s.length()) {
      throw ShapeError("time_major_batch: sequence " + s.source_id +
                       " does not provide frames [" + std::to_string(first) +
                       ", " + std::to_string(first + frames) + ") at " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
    for (std::size_t t = 0; t < frames; ++t) {
      const auto src = s.frame(first + t);
      T* dst = out.data() + (t * n + b) * h * w;
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
  }
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// One time step through a stack of cells plus the optional bridge.

template <typename T>
StepCtx<T> stack_step(const Tensor<T>& x, std::vector<CellState<T>>& states,
                      const BridgeState<T>& bridge_in,
                      const StackParams<T>& sp, bool emit_bridge,
                      BridgeState<T>& bridge_out) {
  StepCtx<T> ctx;
  ctx.bridge_in = !bridge_in.empty();
  ctx.cells.reserve(states.size());
  Tensor<T> base = x;
  for (std::size_t l = 0; l < states.size(); ++l) {
    if (ctx.bridge_in) {
      const Tensor<T>& r = bridge_in.residuals.at(l);
      if (r.shape() != base.shape()) {
        throw ShapeError("bridge residual " + shape_str(r.shape()) +
                         " does not match layer input " +
                         shape_str(base.shape()));
      }
      base += r;
    }
    auto [next, cctx] = cell_step(base, states[l], sp.cells[l]);
    states[l] = std::move(next);
    ctx.cells.push_back(std::move(cctx));
    base = states[l].h;
  }
  if (emit_bridge) {
    std::vector<Tensor<T>> hidden;
    hidden.reserve(states.size());
    for (const auto& s : states) hidden.push_back(s.h);
    auto [bs, bctx] = bridge_step<T>(hidden, sp.bridge);
    bridge_out = std::move(bs);
    ctx.bridge = std::move(bctx);
    ctx.bridge_out = true;
  } else {
    bridge_out = BridgeState<T>{};
  }
  return ctx;
}

template <typename T>
struct StepGrads {
  Tensor<T> dx;
  std::vector<Tensor<T>> dh_prev;
  std::vector<Tensor<T>> dc_prev;
  std::vector<Tensor<T>> d_bridge_in;  // empty unless residuals were applied
};

template <typename T>
bool any_present(const std::vector<Tensor<T>>& v) {
  for (const auto& t : v) {
    if (!t.empty()) return true;
  }
  return false;
}

template <typename T>
StepGrads<T> stack_step_backward(const StepCtx<T>& ctx,
                                 const StackParams<T>& sp,
                                 std::vector<Tensor<T>> dh,
                                 std::vector<Tensor<T>> dc,
                                 const std::vector<Tensor<T>>& d_bridge_out,
                                 const Tensor<T>& d_top,
                                 StackParams<T>& grads) {
  const std::size_t layers = ctx.cells.size();
  dh.resize(layers);
  dc.resize(layers);
  if (!d_top.empty()) accumulate(dh[layers - 1], d_top);

  if (ctx.bridge_out && any_present(d_bridge_out)) {
    auto bg = bridge_step_backward<T>(ctx.bridge, sp.bridge, d_bridge_out);
    for (std::size_t l = 0; l < layers; ++l) accumulate(dh[l], std::move(bg.hidden[l]));
    add_into<T>(grads.bridge, bg.params);
  }

  StepGrads<T> out;
  out.dh_prev.resize(layers);
  out.dc_prev.resize(layers);
  if (ctx.bridge_in) out.d_bridge_in.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    auto g = cell_step_backward(ctx.cells[l], sp.cells[l], dh[l], dc[l]);
    add_into<T>(grads.cells[l], g.params);
    out.dh_prev[l] = std::move(g.prev.h);
    out.dc_prev[l] = std::move(g.prev.c);
    if (ctx.bridge_in) out.d_bridge_in[l] = g.x;
    if (l > 0) {
      accumulate(dh[l - 1], std::move(g.x));
    } else {
      out.dx = std::move(g.x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resize networks

template <typename T>
Tensor<T> resize_in_forward(const Tensor<T>& frames,
                            const ModelParams<T>& params,
                            const NetworkConfig& cfg, ResizeCtx<T>& ctx) {
  Tensor<T> x = frames;
  for (std::size_t i = 0; i < kResizeIn.size(); ++i) {
    const auto& u = params.resize_in[i];
    auto c = conv2d(x, u.weight, u.bias, kResizeIn[i].stride,
                    kResizeIn[i].padding);
    auto n = group_norm(c.out, group_count(c.out.dim(1), cfg.channels_per_group),
                        u.gamma, u.beta);
    auto a = elementwise(Pointwise::Tanh, n.out);
    ctx.conv.push_back(std::move(c.ctx));
    ctx.norm.push_back(std::move(n.ctx));
    ctx.act.push_back(std::move(a.ctx));
    x = std::move(a.out);
  }
  return x;
}

template <typename T>
void resize_in_backward(const ResizeCtx<T>& ctx, Tensor<T> grad,
                        ModelParams<T>& grads) {
  for (std::size_t i = kResizeIn.size(); i-- > 0;) {
    auto ga = elementwise_backward(ctx.act[i], grad);
    auto gn = group_norm_backward(ctx.norm[i], ga.a);
    auto gc = conv2d_backward(ctx.conv[i], gn.input);
    auto& u = grads.resize_in[i];
    u.weight += gc.weight;
    u.bias += gc.bias;
    u.gamma += gn.gamma;
    u.beta += gn.beta;
    grad = std::move(gc.input);
  }
}

template <typename T>
Tensor<T> resize_out_forward(const Tensor<T>& features,
                             const ModelParams<T>& params,
                             const NetworkConfig& cfg, ResizeCtx<T>& ctx) {
  Tensor<T> x = features;
  for (std::size_t i = 0; i < kResizeOut.size(); ++i) {
    const auto& u = params.resize_out[i];
    auto d = conv_transpose2d(x, u.weight, u.bias, kResizeOut[i].stride,
                              kResizeOut[i].padding);
    auto n = group_norm(d.out, group_count(d.out.dim(1), cfg.channels_per_group),
                        u.gamma, u.beta);
    auto a = elementwise(Pointwise::Tanh, n.out);
    ctx.deconv.push_back(std::move(d.ctx));
    ctx.norm.push_back(std::move(n.ctx));
    ctx.act.push_back(std::move(a.ctx));
    x = std::move(a.out);
  }
  auto head = conv2d(x, params.head_weight, params.head_bias, 1, 0);
  auto out = elementwise(Pointwise::Sigmoid, head.out);
  ctx.head = std::move(head.ctx);
  ctx.head_act = std::move(out.ctx);
  return std::move(out.out);
}

template <typename T>
Tensor<T> resize_out_backward(const ResizeCtx<T>& ctx,
                              const Tensor<T>& grad_out,
                              ModelParams<T>& grads) {
  auto gs = elementwise_backward(ctx.head_act, grad_out);
  auto gh = conv2d_backward(ctx.head, gs.a);
  grads.head_weight += gh.weight;
  grads.head_bias += gh.bias;
  Tensor<T> grad = std::move(gh.input);
  for (std::size_t i = kResizeOut.size(); i-- > 0;) {
    auto ga = elementwise_backward(ctx.act[i], grad);
    auto gn = group_norm_backward(ctx.norm[i], ga.a);
    auto gd = conv_transpose2d_backward(ctx.deconv[i], gn.input);
    auto& u = grads.resize_out[i];
    u.weight += gd.weight;
    u.bias += gd.bias;
    u.gamma += gn.gamma;
    u.beta += gn.beta;
    grad = std::move(gd.input);
  }
  return grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder / decoder

template <typename T>
EncodeResult<T> encode(std::span<const Tensor<T>> features, Route column,
                       const ModelParams<T>& params, const NetworkConfig& cfg) {
  if (features.empty()) throw std::invalid_argument("encode: no input frames");
  const StackParams<T>& sp = params.encoders.at(column_index(column, cfg));
  if (sp.cells.empty()) throw ShapeError("encode: encoder has no layers");
  const Tensor<T>& f0 = features[0];
  if (f0.rank() != 4) throw ShapeError("encode: features must be NCHW");
  const std::size_t hidden = sp.cells[0].hidden_channels();

  EncodeResult<T> res;
  res.states.assign(
      sp.cells.size(),
      CellState<T>::zeros(f0.dim(0), hidden, f0.dim(2), f0.dim(3)));
  res.steps.reserve(features.size());
  BridgeState<T> bridge;
  for (const Tensor<T>& x : features) {
    BridgeState<T> next;
    res.steps.push_back(
        stack_step(x, res.states, bridge, sp, cfg.use_bridge, next));
    bridge = std::move(next);
  }
  res.bridge = std::move(bridge);
  return res;
}

template <typename T>
DecodeResult<T> decode(std::span<const CellState<T>> init_states,
                       const BridgeState<T>& init_bridge,
                       const Tensor<T>& first_input, std::size_t steps,
                       const ModelParams<T>& params, const NetworkConfig& cfg) {
  if (steps < 1) throw std::invalid_argument("decode: need at least one step");
  const StackParams<T>& sp = params.decoder;
  if (init_states.size() != sp.cells.size()) {
    throw ShapeError("decode: " + std::to_string(init_states.size()) +
                     " initial states for " + std::to_string(sp.cells.size()) +
                     " layers");
  }
  DecodeResult<T> res;
  std::vector<CellState<T>> states(init_states.begin(), init_states.end());
  BridgeState<T> bridge = cfg.use_bridge ? init_bridge : BridgeState<T>{};
  Tensor<T> x = first_input;
  res.steps.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const bool emit = cfg.use_bridge && k + 1 < steps;
    BridgeState<T> next;
    res.steps.push_back(stack_step(x, states, bridge, sp, emit, next));
    bridge = std::move(next);
    res.outputs.push_back(states.back().h);
    x = states.back().h;
  }
  return res;
}

template <typename T>
BatchForward<T> forward_batch(const Tensor<T>& context, Route column,
                              const ModelParams<T>& params,
                              const NetworkConfig& cfg) {
  if (context.rank() != 4 || context.dim(0) != cfg.context ||
      context.dim(2) != cfg.input_h || context.dim(3) != cfg.input_w) {
    throw ShapeError("forward_batch: expected context [" +
                     std::to_string(cfg.context) + ", N, " +
                     std::to_string(cfg.input_h) + ", " +
                     std::to_string(cfg.input_w) + "], got " +
                     shape_str(context.shape()));
  }
  const std::size_t steps_in = context.dim(0);
  const std::size_t n = context.dim(1);
  BatchForward<T> fwd;
  ForwardTape<T>& tape = fwd.tape;
  tape.column = column;
  tape.batch = n;

  const Tensor<T> frames =
      context.reshaped({steps_in * n, 1, cfg.input_h, cfg.input_w});
  const Tensor<T> feats = resize_in_forward(frames, params, cfg, tape.resize_in);
  std::vector<Tensor<T>> per_step;
  per_step.reserve(steps_in);
  for (std::size_t t = 0; t < steps_in; ++t) {
    per_step.push_back(slice_batch(feats, t * n, n));
  }

  tape.encoder = encode<T>(per_step, column, params, cfg);
  tape.decoder = decode<T>(tape.encoder.states, tape.encoder.bridge,
                           per_step.back(), cfg.horizon, params, cfg);

  const Tensor<T> outs = stack_batch<T>(tape.decoder.outputs);
  Tensor<T> pred = resize_out_forward(outs, params, cfg, tape.resize_out);
  fwd.prediction = std::move(pred).reshaped(
      {cfg.horizon, n, cfg.input_h, cfg.input_w});
  return fwd;
}

template <typename T>
void backward_batch(const ForwardTape<T>& tape, const ModelParams<T>& params,
                    const NetworkConfig& cfg, const Tensor<T>& grad_prediction,
                    ModelParams<T>& grads) {
  const std::size_t n = tape.batch;
  const Shape expected{cfg.horizon, n, cfg.input_h, cfg.input_w};
  if (grad_prediction.shape() != expected) {
    throw ShapeError("backward_batch: gradient " +
                     shape_str(grad_prediction.shape()) + ", expected " +
                     shape_str(expected));
  }
  const Tensor<T> d_outs = resize_out_backward(
      tape.resize_out,
      grad_prediction.reshaped({cfg.horizon * n, 1, cfg.input_h, cfg.input_w}),
      grads);

  // Decoder, newest step first. The top output of step k is also the input
  // of step k+1.
  const std::size_t layers = params.decoder.cells.size();
  std::vector<Tensor<T>> dh(layers), dc(layers), d_bridge;
  Tensor<T> d_next_input;
  for (std::size_t k = cfg.horizon; k-- > 0;) {
    Tensor<T> d_top = slice_batch(d_outs, k * n, n);
    if (!d_next_input.empty()) d_top += d_next_input;
    auto sg = stack_step_backward(tape.decoder.steps[k], params.decoder,
                                  std::move(dh), std::move(dc), d_bridge,
                                  d_top, grads.decoder);
    dh = std::move(sg.dh_prev);
    dc = std::move(sg.dc_prev);
    d_bridge = std::move(sg.d_bridge_in);
    d_next_input = std::move(sg.dx);
  }

  const std::size_t col = column_index(tape.column, cfg);
  const StackParams<T>& enc = params.encoders[col];
  StackParams<T>& enc_grads = grads.encoders[col];
  const std::size_t steps_in = tape.encoder.steps.size();
  std::vector<Tensor<T>> d_feats(steps_in);
  d_feats.back() = std::move(d_next_input);
  for (std::size_t t = steps_in; t-- > 0;) {
    auto sg = stack_step_backward(tape.encoder.steps[t], enc, std::move(dh),
                                  std::move(dc), d_bridge, Tensor<T>{},
                                  enc_grads);
    accumulate(d_feats[t], std::move(sg.dx));
    dh = std::move(sg.dh_prev);
    dc = std::move(sg.dc_prev);
    d_bridge = std::move(sg.d_bridge_in);
  }

  resize_in_backward(tape.resize_in, stack_batch<T>(d_feats), grads);
}

template <typename T>
RadarSequence predict(const RadarSequence& seq, const ModelParams<T>& params,
                      const NetworkConfig& cfg) {
  if (seq.length() != cfg.context) {
    throw std::invalid_argument("predict: expected " +
                                std::to_string(cfg.context) +
                                " context frames, got " +
                                std::to_string(seq.length()));
  }
  if (seq.height() != cfg.input_h || seq.width() != cfg.input_w) {
    throw std::invalid_argument(
        "predict: frame size " + std::to_string(seq.height()) + "x" +
        std::to_string(seq.width()) + " does not match configured " +
        std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
  }
  const Route r = cfg.context >= 2 ? route(seq, cfg) : Route::Light;
  const RadarSequence* ptr = &seq;
  const Tensor<T> ctx =
      time_major_batch<T>(std::span<const RadarSequence* const>(&ptr, 1), 0,
                          cfg.context);
  const auto fwd = forward_batch(ctx, r, params, cfg);
  RadarSequence out;
  out.frames = fwd.prediction.template cast<float>().reshaped(
      {cfg.horizon, cfg.input_h, cfg.input_w});
  out.origin = seq.origin;
  out.source_id = seq.source_id;
  return out;
}

#define STARBRI_INSTANTIATE_NETWORK(T)                                        \
  template Tensor<T> time_major_batch<T>(std::span<const RadarSequence* const>, \
                                         std::size_t, std::size_t);          \
  template EncodeResult<T> encode<T>(std::span<const Tensor<T>>, Route,      \
                                     const ModelParams<T>&,                  \
                                     const NetworkConfig&);                  \
  template DecodeResult<T> decode<T>(                                        \
      std::span<const CellState<T>>, const BridgeState<T>&, const Tensor<T>&, \
      std::size_t, const ModelParams<T>&, const NetworkConfig&);             \
  template BatchForward<T> forward_batch<T>(const Tensor<T>&, Route,         \
                                            const ModelParams<T>&,           \
                                            const NetworkConfig&);           \
  template void backward_batch<T>(const ForwardTape<T>&,                     \
                                  const ModelParams<T>&,                     \
                                  const NetworkConfig&, const Tensor<T>&,    \
                                  ModelParams<T>&);                          \
  template RadarSequence predict<T>(const RadarSequence&,                    \
                                    const ModelParams<T>&,                   \
                                    const NetworkConfig&);

STARBRI_INSTANTIATE_NETWORK(float)
STARBRI_INSTANTIATE_NETWORK(double)

}  // namespace starbri
