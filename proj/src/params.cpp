#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "starbri/network.hpp"

namespace starbri {

std::string_view route_name(Route route) {
  switch (route) {
    case Route::Light: return "light";
    case Route::Moderate: return "moderate";
    case Route::Heavy: return "heavy";
  }
  return "?";
}

std::optional<Route> parse_route(std::string_view name) {
  for (Route r : kAllRoutes) {
    if (route_name(r) == name) return r;
  }
  return std::nullopt;
}

RadarSequence RadarSequence::slice(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > length()) {
    throw ShapeError("RadarSequence::slice: frames [" + std::to_string(begin) +
                     ", " + std::to_string(begin + count) + ") outside length " +
                     std::to_string(length()));
  }
  const std::size_t fs = frame_size();
  std::vector<float> data(frames.data() + begin * fs,
                          frames.data() + (begin + count) * fs);
  RadarSequence out;
  out.frames = Tensor<float>({count, height(), width()}, std::move(data));
  out.origin = origin;
  out.source_id = source_id;
  return out;
}

NetworkConfig NetworkConfig::full_scale() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::desk() {
  NetworkConfig cfg;
  cfg.hidden_channels = {32, 32};
  cfg.input_h = 32;
  cfg.input_w = 32;
  return cfg;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("network config: " + msg);
  };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden_channels.size() != layers) {
    fail("hidden_channels needs one entry per layer (" +
         std::to_string(layers) + ")");
  }
  for (std::size_t c : hidden_channels) {
    if (c == 0) fail("hidden channel counts must be positive");
    if (c != hidden_channels.front()) {
      fail("all layers must share one hidden width (bridge residuals and "
           "decoder feedback add layer outputs to layer inputs)");
    }
  }
  if (cell_kernel % 2 == 0) fail("cell_kernel must be odd");
  if (input_h == 0 || input_w == 0 || input_h % kDownsample != 0 ||
      input_w % kDownsample != 0) {
    fail("input size must be a positive multiple of " +
         std::to_string(kDownsample));
  }
  if (horizon < 1) fail("horizon must be >= 1");
  if (context < 1) fail("context must be >= 1");
  if (route_thresholds.m1 > route_thresholds.m2 ||
      route_thresholds.d1 > route_thresholds.d2) {
    fail("route thresholds must be nested (m1 <= m2, d1 <= d2)");
  }
}

std::size_t column_index(Route route, const NetworkConfig& cfg) {
  return cfg.multi_column ? static_cast<std::size_t>(route) : 0;
}

namespace {

template <typename T>
ConvUnit<T> make_unit(Shape weight_shape, std::size_t out_channels) {
  ConvUnit<T> u;
  u.weight = Tensor<T>(std::move(weight_shape));
  u.bias = Tensor<T>({out_channels});
  u.gamma = Tensor<T>({out_channels});
  u.beta = Tensor<T>({out_channels});
  return u;
}

template <typename T>
StackParams<T> zero_stack(const NetworkConfig& cfg) {
  StackParams<T> s;
  const std::size_t hid = cfg.hidden();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    s.cells.push_back(ConvLSTMParams<T>::zeros(hid, hid, cfg.cell_kernel,
                                               cfg.cell_kernel,
                                               cfg.channels_per_group));
  }
  s.bridge = BridgeParams<T>::zeros(cfg.layers, hid, cfg.channels_per_group);
  return s;
}

template <typename T>
StackParams<T> init_stack(const NetworkConfig& cfg, std::mt19937_64& rng) {
  StackParams<T> s;
  const std::size_t hid = cfg.hidden();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    s.cells.push_back(ConvLSTMParams<T>::init(hid, hid, cfg.cell_kernel,
                                              cfg.cell_kernel,
                                              cfg.channels_per_group, rng));
  }
  s.bridge = BridgeParams<T>::init(cfg.layers, hid, cfg.channels_per_group, rng);
  return s;
}

template <typename T>
void fill_uniform(Tensor<T>& t, double fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const NetworkConfig& cfg) {
  cfg.validate();
  ModelParams p;
  const std::size_t f = cfg.feature_channels();
  std::size_t in_c = 1;
  for (const auto& layer : kResizeIn) {
    p.resize_in.push_back(
        make_unit<T>({f, in_c, layer.kernel, layer.kernel}, f));
    in_c = f;
  }
  for (std::size_t i = 0; i < kResizeOut.size(); ++i) {
    const std::size_t out_c = i + 1 == kResizeOut.size() ? cfg.head_channels() : f;
    const std::size_t k = kResizeOut[i].kernel;
    p.resize_out.push_back(make_unit<T>({f, out_c, k, k}, out_c));
  }
  p.head_weight = Tensor<T>({1, cfg.head_channels(), 1, 1});
  p.head_bias = Tensor<T>({1});
  for (auto& enc : p.encoders) enc = zero_stack<T>(cfg);
  p.decoder = zero_stack<T>(cfg);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const NetworkConfig& cfg,
                                    std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  std::mt19937_64 rng(seed);
  for (auto& u : p.resize_in) {
    fill_uniform(u.weight, static_cast<double>(u.weight.numel() / u.weight.dim(0)), rng);
    u.gamma.fill(T(1));
  }
  for (auto& u : p.resize_out) {
    fill_uniform(u.weight, static_cast<double>(u.weight.numel() / u.weight.dim(1)), rng);
    u.gamma.fill(T(1));
  }
  fill_uniform(p.head_weight, static_cast<double>(cfg.head_channels()), rng);
  for (auto& enc : p.encoders) enc = init_stack<T>(cfg, rng);
  p.decoder = init_stack<T>(cfg, rng);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like(const ModelParams& other) {
  ModelParams p = other;
  p.visit([](std::string_view, Tensor<T>& t) { t.fill(T(0)); });
  return p;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template struct ModelParams<float>;
template struct ModelParams<double>;

}  // namespace starbri
