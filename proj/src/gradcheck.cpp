#include "starbri/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include "starbri/convlstm.hpp"
#include "starbri/loss_metrics.hpp"
#include "starbri/network.hpp"
#include "starbri/ops.hpp"
#include "starbri/star_bridge.hpp"

namespace starbri {

double relative_error(double a, double n, double floor) {
  const double scale = std::max({std::abs(a), std::abs(n), floor});
  return std::abs(a - n) / scale;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& s : slots) m = std::max(m, s.max_rel_error);
  return m;
}

bool GradCheckReport::pass() const {
  for (const auto& s : slots) {
    if (!s.finite || !(s.max_rel_error < tolerance)) return false;
  }
  return !slots.empty();
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << name << ": max rel err " << max_rel_error() << " (tol " << tolerance << ", floor "
     << floor << ") "
     << (pass() ? "PASS" : "FAIL");
  for (const auto& s : slots) {
    if (!s.finite) {
      os << "; non-finite in " << s.name << " at " << s.worst_index;
    } else if (!(s.max_rel_error < tolerance)) {
      os << "; " << s.name << "[" << s.worst_index << "] " << s.max_rel_error;
    }
  }
  return os.str();
}

GradCheckReport gradient_check(const GradProbe& probe, double h, double tolerance,
                               std::size_t max_per_slot) {
  GradCheckReport rep;
  rep.name = probe.name;
  rep.tolerance = tolerance;
  const std::vector<Tensor<double>> analytic = probe.analytic();
  // Rounding in f(x +- h) leaves a few ulps of |f| / h in every difference
  // quotient. Gradients below noise / tolerance cannot be resolved, so that
  // is the smallest scale a relative error is measured against.
  const double f0 = probe.objective();
  const double noise = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(f0) / h;
  rep.floor = std::max(1e-6, noise / tolerance);
  if (analytic.size() != probe.slots.size()) {
    throw ShapeError("gradient_check: " + std::to_string(analytic.size()) +
                     " gradients for " + std::to_string(probe.slots.size()) + " slots");
  }
  for (std::size_t s = 0; s < probe.slots.size(); ++s) {
    const auto& [name, slot] = probe.slots[s];
    const Tensor<double>& g = analytic[s];
    SlotReport sr;
    sr.name = name;
    if (g.shape() != slot->shape()) {
      throw ShapeError("gradient_check: gradient for '" + name + "' has shape " +
                       shape_str(g.shape()) + ", slot " + shape_str(slot->shape()));
    }
    const std::size_t n = slot->numel();
    const std::size_t stride =
        max_per_slot && n > max_per_slot ? (n + max_per_slot - 1) / max_per_slot : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = (*slot)[i];
      const double keep = x;
      x = keep + h;
      const double fp = probe.objective();
      x = keep - h;
      const double fm = probe.objective();
      x = keep;
      const double num = (fp - fm) / (2.0 * h);
      ++sr.checked;
      if (!std::isfinite(num) || !std::isfinite(g[i])) {
        sr.finite = false;
        sr.worst_index = i;
        break;
      }
      const double e = relative_error(g[i], num, rep.floor);
      if (e > sr.max_rel_error) {
        sr.max_rel_error = e;
        sr.worst_index = i;
      }
    }
    rep.slots.push_back(std::move(sr));
  }
  return rep;
}

namespace {

using Rng = std::mt19937_64;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Probe state lives in a shared block so the closures stay valid when the
// probe is copied or moved.
template <typename State>
GradProbe make_probe(std::string name, std::shared_ptr<State> st) {
  GradProbe p;
  p.name = std::move(name);
  p.slots = st->slots();
  p.objective = [st] { return st->objective(); };
  p.analytic = [st] { return st->analytic(); };
  return p;
}

struct ConvState {
  Tensor<double> x, w, b, weights;
  int stride = 1, pad = 0;
  bool transposed = false;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    return {{"input", &x}, {"weight", &w}, {"bias", &b}};
  }
  double objective() {
    return transposed ? dot(weights, conv_transpose2d(x, w, b, stride, pad).out)
                      : dot(weights, conv2d(x, w, b, stride, pad).out);
  }
  std::vector<Tensor<double>> analytic() {
    ConvGrads<double> g;
    if (transposed) {
      g = conv_transpose2d_backward(conv_transpose2d(x, w, b, stride, pad).ctx, weights);
    } else {
      g = conv2d_backward(conv2d(x, w, b, stride, pad).ctx, weights);
    }
    return {g.input, g.weight, g.bias};
  }
};

GradProbe conv_probe(Rng& rng, bool transposed) {
  auto st = std::make_shared<ConvState>();
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const std::size_t k = pick(rng, 1, 4);
  st->stride = static_cast<int>(pick(rng, 1, 2));
  st->pad = static_cast<int>(pick(rng, 0, (k - 1) / 2 + (k > 1 ? 1 : 0)));
  st->pad = std::min<int>(st->pad, static_cast<int>(k) - 1);
  const std::size_t h = pick(rng, k, k + 4), w = pick(rng, k, k + 4);
  st->transposed = transposed;
  st->x = random_tensor({n, cin, h, w}, rng);
  st->w = random_tensor(transposed ? Shape{cin, cout, k, k} : Shape{cout, cin, k, k}, rng);
  st->b = random_tensor({cout}, rng);
  const auto out = st->transposed ? conv_transpose2d(st->x, st->w, st->b, st->stride, st->pad).out
                                  : conv2d(st->x, st->w, st->b, st->stride, st->pad).out;
  st->weights = random_tensor(out.shape(), rng);
  return make_probe(transposed ? "conv_transpose2d" : "conv2d", st);
}

struct NormState {
  Tensor<double> x, gamma, beta, weights;
  std::size_t groups = 1;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    return {{"input", &x}, {"gamma", &gamma}, {"beta", &beta}};
  }
  double objective() { return dot(weights, group_norm(x, groups, gamma, beta).out); }
  std::vector<Tensor<double>> analytic() {
    auto g = group_norm_backward(group_norm(x, groups, gamma, beta).ctx, weights);
    return {g.input, g.gamma, g.beta};
  }
};

GradProbe norm_probe(Rng& rng) {
  auto st = std::make_shared<NormState>();
  st->groups = pick(rng, 1, 3);
  const std::size_t c = st->groups * pick(rng, 1, 3);
  const Shape s{pick(rng, 1, 2), c, pick(rng, 2, 4), pick(rng, 2, 4)};
  st->x = random_tensor(s, rng, -2.0, 2.0);
  st->gamma = random_tensor({c}, rng, 0.5, 1.5);
  st->beta = random_tensor({c}, rng);
  st->weights = random_tensor(s, rng);
  return make_probe("group_norm", st);
}

struct PointwiseState {
  Pointwise kind = Pointwise::Sigmoid;
  Tensor<double> a, b, weights;

  bool binary() const { return kind == Pointwise::Add || kind == Pointwise::Hadamard; }
  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    if (binary()) return {{"a", &a}, {"b", &b}};
    return {{"a", &a}};
  }
  Forward<double, ElementwiseCtx<double>> run() {
    return binary() ? elementwise(kind, a, b) : elementwise(kind, a);
  }
  double objective() { return dot(weights, run().out); }
  std::vector<Tensor<double>> analytic() {
    auto g = elementwise_backward(run().ctx, weights);
    if (binary()) return {g.a, g.b};
    return {g.a};
  }
};

GradProbe pointwise_probe(Rng& rng, Pointwise kind, const char* name) {
  auto st = std::make_shared<PointwiseState>();
  st->kind = kind;
  const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
  st->a = random_tensor(s, rng, -3.0, 3.0);
  st->b = random_tensor(s, rng, -3.0, 3.0);
  st->weights = random_tensor(s, rng);
  return make_probe(name, st);
}

struct ConcatState {
  std::vector<Tensor<double>> parts;
  Tensor<double> weights;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    std::vector<std::pair<std::string, Tensor<double>*>> out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out.emplace_back("part" + std::to_string(i), &parts[i]);
    }
    return out;
  }
  double objective() { return dot(weights, concat_channels<double>(parts).out); }
  std::vector<Tensor<double>> analytic() {
    return concat_channels_backward(concat_channels<double>(parts).ctx, weights);
  }
};

GradProbe concat_probe(Rng& rng) {
  auto st = std::make_shared<ConcatState>();
  const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
  const std::size_t k = pick(rng, 2, 3);
  std::size_t total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t c = pick(rng, 1, 3);
    total += c;
    st->parts.push_back(random_tensor({n, c, h, w}, rng));
  }
  st->weights = random_tensor({n, total, h, w}, rng);
  return make_probe("concat_channels", st);
}

struct SplitState {
  Tensor<double> x;
  std::vector<std::size_t> sizes;
  std::vector<Tensor<double>> weights;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() { return {{"input", &x}}; }
  double objective() {
    const auto parts = split_channels<double>(x, sizes);
    double s = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) s += dot(weights[i], parts[i]);
    return s;
  }
  std::vector<Tensor<double>> analytic() {
    return {split_channels_backward<double>(weights)};
  }
};

GradProbe split_probe(Rng& rng) {
  auto st = std::make_shared<SplitState>();
  const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
  std::size_t total = 0;
  for (std::size_t i = 0, k = pick(rng, 2, 3); i < k; ++i) {
    st->sizes.push_back(pick(rng, 1, 3));
    total += st->sizes.back();
    st->weights.push_back(random_tensor({n, st->sizes.back(), h, w}, rng));
  }
  st->x = random_tensor({n, total, h, w}, rng);
  return make_probe("split_channels", st);
}

struct LossState {
  Tensor<double> target, pred;
  LossConfig cfg;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() { return {{"prediction", &pred}}; }
  double objective() { return multi_sigmoid_loss(target, pred, cfg).value; }
  std::vector<Tensor<double>> analytic() { return {multi_sigmoid_loss(target, pred, cfg).grad}; }
};

GradProbe loss_probe(Rng& rng) {
  auto st = std::make_shared<LossState>();
  const Shape s{pick(rng, 1, 3), pick(rng, 1, 2), pick(rng, 2, 5), pick(rng, 2, 5)};
  st->target = random_tensor(s, rng, 0.0, 1.0);
  st->pred = random_tensor(s, rng, 0.0, 1.0);
  st->cfg.lambda_mse = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
  return make_probe("multi_sigmoid_loss", st);
}

template <typename P>
void randomize(P& params, Rng& rng, double spread) {
  params.visit([&](std::string_view name, Tensor<double>& t) {
    std::uniform_real_distribution<double> d(-spread, spread);
    const bool gamma = name.find("gamma") != std::string_view::npos;
    for (auto& v : t.values()) v = gamma ? 1.0 + d(rng) : v + d(rng);
  });
}

struct CellState_ {
  Tensor<double> x;
  CellState<double> prev;
  ConvLSTMParams<double> p;
  Tensor<double> wh, wc;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    std::vector<std::pair<std::string, Tensor<double>*>> out{
        {"x", &x}, {"h_prev", &prev.h}, {"c_prev", &prev.c}};
    p.visit([&](std::string_view n, Tensor<double>& t) { out.emplace_back(std::string(n), &t); });
    return out;
  }
  double objective() {
    const auto next = cell_step(x, prev, p).first;
    return dot(wh, next.h) + dot(wc, next.c);
  }
  std::vector<Tensor<double>> analytic() {
    auto g = cell_step_backward(cell_step(x, prev, p).second, p, wh, wc);
    std::vector<Tensor<double>> out{g.x, g.prev.h, g.prev.c};
    g.params.visit([&](std::string_view, Tensor<double>& t) { out.push_back(t); });
    return out;
  }
};

GradProbe cell_probe(Rng& rng) {
  auto st = std::make_shared<CellState_>();
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 2), hid = pick(rng, 2, 3);
  const std::size_t h = pick(rng, 3, 4), w = pick(rng, 3, 4);
  const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
  st->p = ConvLSTMParams<double>::init(cin, hid, k, k, 2, rng);
  randomize(st->p, rng, 0.3);
  st->x = random_tensor({n, cin, h, w}, rng);
  st->prev.h = random_tensor({n, hid, h, w}, rng, -0.9, 0.9);
  st->prev.c = random_tensor({n, hid, h, w}, rng);
  st->wh = random_tensor({n, hid, h, w}, rng);
  st->wc = random_tensor({n, hid, h, w}, rng);
  return make_probe("cell_step", st);
}

struct BridgeState_ {
  std::vector<Tensor<double>> hidden;
  BridgeParams<double> p;
  std::vector<Tensor<double>> weights;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    std::vector<std::pair<std::string, Tensor<double>*>> out;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      out.emplace_back("hidden" + std::to_string(l), &hidden[l]);
    }
    p.visit([&](std::string_view n, Tensor<double>& t) { out.emplace_back(std::string(n), &t); });
    return out;
  }
  double objective() {
    const auto res = bridge_step<double>(hidden, p).first.residuals;
    double s = 0.0;
    for (std::size_t l = 0; l < res.size(); ++l) s += dot(weights[l], res[l]);
    return s;
  }
  std::vector<Tensor<double>> analytic() {
    auto g = bridge_step_backward<double>(bridge_step<double>(hidden, p).second, p, weights);
    std::vector<Tensor<double>> out = g.hidden;
    g.params.visit([&](std::string_view, Tensor<double>& t) { out.push_back(t); });
    return out;
  }
};

GradProbe bridge_probe(Rng& rng) {
  auto st = std::make_shared<BridgeState_>();
  const std::size_t layers = pick(rng, 1, 3), hid = pick(rng, 2, 3);
  const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 3), w = pick(rng, 2, 3);
  st->p = BridgeParams<double>::init(layers, hid, 2, rng);
  randomize(st->p, rng, 0.3);
  for (std::size_t l = 0; l < layers; ++l) {
    st->hidden.push_back(random_tensor({n, hid, h, w}, rng, -0.9, 0.9));
    st->weights.push_back(random_tensor({n, hid, h, w}, rng));
  }
  return make_probe("bridge_step", st);
}

struct NetState {
  NetworkConfig cfg;
  ModelParams<double> p;
  Tensor<double> context, target;
  Route column = Route::Heavy;
  LossConfig loss;

  std::vector<std::pair<std::string, Tensor<double>*>> slots() {
    std::vector<std::pair<std::string, Tensor<double>*>> out;
    const std::string used = "encoder." + std::string(route_name(column)) + ".";
    p.visit([&](std::string_view n, Tensor<double>& t) {
      if (n.starts_with("encoder.") && !n.starts_with(used)) return;
      out.emplace_back(std::string(n), &t);
    });
    return out;
  }
  double objective() {
    return multi_sigmoid_loss(target, forward_batch(context, column, p, cfg).prediction, loss)
        .value;
  }
  std::vector<Tensor<double>> analytic() {
    auto fwd = forward_batch(context, column, p, cfg);
    auto lv = multi_sigmoid_loss(target, fwd.prediction, loss);
    auto g = ModelParams<double>::zeros_like(p);
    backward_batch(fwd.tape, p, cfg, lv.grad, g);
    std::vector<Tensor<double>> out;
    const std::string used = "encoder." + std::string(route_name(column)) + ".";
    g.visit([&](std::string_view n, Tensor<double>& t) {
      if (n.starts_with("encoder.") && !n.starts_with(used)) return;
      out.push_back(t);
    });
    return out;
  }
};

}  // namespace

std::vector<GradCheckReport> op_gradient_checks(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  std::vector<GradCheckReport> out;
  auto run = [&](GradProbe p, std::size_t i) {
    p.name += " #" + std::to_string(i + 1);
    out.push_back(gradient_check(p));
  };
  for (std::size_t i = 0; i < instances; ++i) run(conv_probe(rng, false), i);
  for (std::size_t i = 0; i < instances; ++i) run(conv_probe(rng, true), i);
  for (std::size_t i = 0; i < instances; ++i) run(norm_probe(rng), i);
  for (std::size_t i = 0; i < instances; ++i) run(pointwise_probe(rng, Pointwise::Sigmoid, "sigmoid"), i);
  for (std::size_t i = 0; i < instances; ++i) run(pointwise_probe(rng, Pointwise::Tanh, "tanh"), i);
  for (std::size_t i = 0; i < instances; ++i) run(pointwise_probe(rng, Pointwise::Add, "add"), i);
  for (std::size_t i = 0; i < instances; ++i) run(pointwise_probe(rng, Pointwise::Hadamard, "hadamard"), i);
  for (std::size_t i = 0; i < instances; ++i) run(concat_probe(rng), i);
  for (std::size_t i = 0; i < instances; ++i) run(split_probe(rng), i);
  for (std::size_t i = 0; i < instances; ++i) run(loss_probe(rng), i);
  return out;
}

std::vector<GradCheckReport> cell_gradient_checks(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  std::vector<GradCheckReport> out;
  for (std::size_t i = 0; i < instances; ++i) {
    GradProbe p = cell_probe(rng);
    p.name += " #" + std::to_string(i + 1);
    out.push_back(gradient_check(p));
  }
  for (std::size_t i = 0; i < instances; ++i) {
    GradProbe p = bridge_probe(rng);
    p.name += " #" + std::to_string(i + 1);
    out.push_back(gradient_check(p));
  }
  return out;
}

GradCheckReport end_to_end_gradient_check(std::uint64_t seed, bool use_bridge) {
  Rng rng(seed);
  auto st = std::make_shared<NetState>();
  st->cfg.layers = 1;
  st->cfg.hidden_channels = {2};
  st->cfg.input_h = 8;
  st->cfg.input_w = 8;
  st->cfg.context = 2;
  st->cfg.horizon = 2;
  st->cfg.use_bridge = use_bridge;
  st->p = ModelParams<double>::init(st->cfg, seed);
  randomize(st->p, rng, 0.2);
  st->context = random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0);
  st->target = random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0);
  GradCheckReport rep = gradient_check(make_probe("end_to_end", st), 1e-5, 1e-3);
  return rep;
}

}  // namespace starbri
