#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "starbri/convlstm.hpp"
#include "starbri/radar_sequence.hpp"
#include "starbri/star_bridge.hpp"

namespace starbri {

// ---------------------------------------------------------------------------
// Routing

enum class Route : std::uint8_t { Light = 0, Moderate = 1, Heavy = 2 };

inline constexpr std::array<Route, 3> kAllRoutes{Route::Light, Route::Moderate,
                                                 Route::Heavy};

std::string_view route_name(Route route);
std::optional<Route> parse_route(std::string_view name);

/// Nested boxes on (mean intensity, changing rate): Light inside
/// (m1, d1), Moderate inside (m2, d2), Heavy elsewhere.
struct RouteThresholds {
  double m1 = 0.05;
  double d1 = 0.005;
  double m2 = 0.15;
  double d2 = 0.015;
};

struct RouteStats {
  double mu = 0.0;     // mean intensity over all pixels and frames
  double delta = 0.0;  // mean |mean(I_{t+1}) - mean(I_t)|
};

/// Statistics over the first `frames` frames (all frames when 0 or when the
/// sequence is shorter). Needs at least two frames.
RouteStats route_stats(const RadarSequence& seq, std::size_t frames = 0);
Route classify(const RouteStats& stats, const RouteThresholds& thresholds);

// ---------------------------------------------------------------------------
// Configuration

struct NetworkConfig {
  std::size_t layers = 2;
  std::vector<std::size_t> hidden_channels{64, 64};
  std::size_t cell_kernel = 3;
  std::size_t input_h = 100;
  std::size_t input_w = 100;
  std::size_t horizon = 10;  // predicted frames L
  std::size_t context = 10;  // observed frames T
  RouteThresholds route_thresholds;
  std::size_t channels_per_group = 16;
  bool use_bridge = true;
  bool multi_column = true;

  static constexpr std::size_t kDownsample = 4;

  static NetworkConfig full_scale();
  /// 32x32 frames, 2 layers x 32 channels, 8x8 features, T = L = 10.
  static NetworkConfig desk();

  std::size_t feature_channels() const { return hidden_channels.front(); }
  std::size_t hidden() const { return hidden_channels.front(); }
  std::size_t head_channels() const {
    return std::max<std::size_t>(1, feature_channels() / 2);
  }
  std::size_t feature_h() const { return input_h / kDownsample; }
  std::size_t feature_w() const { return input_w / kDownsample; }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Parameters

/// Convolution followed by group normalization (and tanh in the resize nets).
template <typename T>
struct ConvUnit {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;

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
    f("weight", self.weight);
    f("bias", self.bias);
    f("gn.gamma", self.gamma);
    f("gn.beta", self.beta);
  }
};

template <typename T>
struct StackParams {
  std::vector<ConvLSTMParams<T>> cells;
  BridgeParams<T> bridge;

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
    for (std::size_t l = 0; l < self.cells.size(); ++l) {
      const std::string prefix = "cell." + std::to_string(l) + ".";
      self.cells[l].visit(
          [&](std::string_view name, auto& t) { f(prefix + std::string(name), t); });
    }
    self.bridge.visit(
        [&](std::string_view name, auto& t) { f("bridge." + std::string(name), t); });
  }
};

struct ResizeLayer {
  std::size_t kernel;
  int stride;
  int padding;
};

/// Downsampling ×4 in three layers: two stride-2 kernel-4 convs and a
/// stride-1 kernel-3 conv.
inline constexpr std::array<ResizeLayer, 3> kResizeIn{
    ResizeLayer{4, 2, 1}, ResizeLayer{4, 2, 1}, ResizeLayer{3, 1, 1}};
/// Mirror image built from transposed convolutions.
inline constexpr std::array<ResizeLayer, 3> kResizeOut{
    ResizeLayer{3, 1, 1}, ResizeLayer{4, 2, 1}, ResizeLayer{4, 2, 1}};

template <typename T>
struct ModelParams {
  std::vector<ConvUnit<T>> resize_in;   // conv weights [Cout, Cin, K, K]
  std::vector<ConvUnit<T>> resize_out;  // transposed [Cin, Cout, K, K]
  Tensor<T> head_weight;                // [1, head_channels, 1, 1]
  Tensor<T> head_bias;                  // [1]
  std::array<StackParams<T>, 3> encoders;  // indexed by Route
  StackParams<T> decoder;

  static ModelParams init(const NetworkConfig& cfg, std::uint64_t seed);
  /// All tensors zero, gammas included.
  static ModelParams zeros(const NetworkConfig& cfg);
  /// Same structure with every tensor zeroed.
  static ModelParams zeros_like(const ModelParams& other);

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t i = 0; i < self.resize_in.size(); ++i) {
      const std::string prefix = "resize_in." + std::to_string(i) + ".";
      self.resize_in[i].visit(
          [&](std::string_view name, auto& t) { f(prefix + std::string(name), t); });
    }
    for (std::size_t i = 0; i < self.resize_out.size(); ++i) {
      const std::string prefix = "resize_out." + std::to_string(i) + ".";
      self.resize_out[i].visit(
          [&](std::string_view name, auto& t) { f(prefix + std::string(name), t); });
    }
    f(std::string("head.weight"), self.head_weight);
    f(std::string("head.bias"), self.head_bias);
    for (Route r : kAllRoutes) {
      const std::string prefix =
          "encoder." + std::string(route_name(r)) + ".";
      self.encoders[static_cast<std::size_t>(r)].visit(
          [&](std::string_view name, auto& t) { f(prefix + std::string(name), t); });
    }
    self.decoder.visit(
        [&](std::string_view name, auto& t) { f("decoder." + std::string(name), t); });
  }
};

/// Flat, visit-ordered pointers to every tensor of a parameter structure.
template <typename T, typename P>
std::vector<Tensor<T>*> tensor_list(P& params) {
  std::vector<Tensor<T>*> out;
  params.visit([&](std::string_view, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

/// dst += src tensor by tensor; empty source tensors are skipped.
template <typename T, typename P>
void add_into(P& dst, const P& src) {
  std::vector<Tensor<T>*> d = tensor_list<T>(dst);
  std::vector<const Tensor<T>*> s;
  src.visit([&](std::string_view, const Tensor<T>& t) { s.push_back(&t); });
  if (d.size() != s.size()) throw ShapeError("add_into: structure mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!s[i]->empty()) accumulate(*d[i], *s[i]);
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct StepCtx {
  std::vector<CellCtx<T>> cells;
  bool bridge_in = false;   // residuals were added to the layer inputs
  bool bridge_out = false;  // a bridge step ran after the layers
  BridgeCtx<T> bridge;
};

template <typename T>
struct EncodeResult {
  std::vector<CellState<T>> states;  // final state per layer
  BridgeState<T> bridge;             // final bridge state (empty if disabled)
  std::vector<StepCtx<T>> steps;
};

template <typename T>
struct DecodeResult {
  std::vector<Tensor<T>> outputs;  // top-layer hidden output per step
  std::vector<StepCtx<T>> steps;
};

/// Column used for a route, honouring single-column mode.
std::size_t column_index(Route route, const NetworkConfig& cfg);

template <typename T>
EncodeResult<T> encode(std::span<const Tensor<T>> features, Route column,
                       const ModelParams<T>& params, const NetworkConfig& cfg);

template <typename T>
DecodeResult<T> decode(std::span<const CellState<T>> init_states,
                       const BridgeState<T>& init_bridge,
                       const Tensor<T>& first_input, std::size_t steps,
                       const ModelParams<T>& params, const NetworkConfig& cfg);

template <typename T>
struct ResizeCtx {
  std::vector<Conv2dCtx<T>> conv;
  std::vector<ConvTranspose2dCtx<T>> deconv;
  std::vector<GroupNormCtx<T>> norm;
  std::vector<ElementwiseCtx<T>> act;
  Conv2dCtx<T> head;
  ElementwiseCtx<T> head_act;
};

/// Everything the backward pass needs from one batched forward pass.
template <typename T>
struct ForwardTape {
  Route column = Route::Light;
  std::size_t batch = 0;
  ResizeCtx<T> resize_in;
  EncodeResult<T> encoder;
  DecodeResult<T> decoder;
  ResizeCtx<T> resize_out;
};

template <typename T>
struct BatchForward {
  Tensor<T> prediction;  // [L, N, H, W], values in (0, 1)
  ForwardTape<T> tape;
};

/// Runs the full network on a time-major batch [T, N, H, W] through the
/// encoder column chosen for `column`.
template <typename T>
BatchForward<T> forward_batch(const Tensor<T>& context, Route column,
                              const ModelParams<T>& params,
                              const NetworkConfig& cfg);

/// Accumulates parameter gradients for dLoss/dPrediction into `grads`.
template <typename T>
void backward_batch(const ForwardTape<T>& tape, const ModelParams<T>& params,
                    const NetworkConfig& cfg, const Tensor<T>& grad_prediction,
                    ModelParams<T>& grads);

/// Routes the sequence on its own statistics and predicts cfg.horizon frames.
template <typename T>
RadarSequence predict(const RadarSequence& seq, const ModelParams<T>& params,
                      const NetworkConfig& cfg);

/// Forecast that repeats the last observed frame `horizon` times.
RadarSequence persistence_baseline(const RadarSequence& seq,
                                   std::size_t horizon);

Route route(const RadarSequence& seq, const NetworkConfig& cfg);

/// Stacks the first `frames` frames of each sequence into [frames, N, H, W].
template <typename T>
Tensor<T> time_major_batch(std::span<const RadarSequence* const> seqs,
                           std::size_t first, std::size_t frames);

}  // namespace starbri
