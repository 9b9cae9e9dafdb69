#include "starbri/loss_metrics.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>

#include "starbri/ops.hpp"

namespace starbri {

namespace {
std::atomic<bool> g_clamp_warned{false};
}

double normalize(double dbz) {
  if (!(dbz >= 0.0 && dbz <= kMaxDbz)) {
    if (!g_clamp_warned.exchange(true)) {
      std::cerr << "warning: reflectivity " << dbz
                << " dBZ outside [0, 70], clamped\n";
    }
    dbz = std::isnan(dbz) ? 0.0 : std::clamp(dbz, 0.0, kMaxDbz);
  }
  return dbz / kMaxDbz;
}

double denormalize(double p) { return p * kMaxDbz; }

double scale_schedule(std::uint64_t iteration, const ScaleSchedule& sch) {
  if (sch.iterations == 0 || iteration >= sch.iterations) return sch.end;
  const double frac =
      static_cast<double>(iteration) / static_cast<double>(sch.iterations);
  return sch.start + (sch.end - sch.start) * frac;
}

void LossConfig::validate() const {
  if (use_msl && critical_points.empty()) {
    throw std::invalid_argument("loss: critical_points must not be empty");
  }
  for (std::size_t i = 0; i < critical_points.size(); ++i) {
    const double c = critical_points[i];
    if (!(c > 0.0 && c < 1.0)) {
      throw std::invalid_argument("loss: critical point " + std::to_string(c) +
                                  " outside (0, 1)");
    }
    if (i > 0 && !(c > critical_points[i - 1])) {
      throw std::invalid_argument("loss: critical points must increase");
    }
  }
  if (!(scale > 0.0)) throw std::invalid_argument("loss: scale must be > 0");
  if (lambda_mse < 0.0) throw std::invalid_argument("loss: lambda_mse must be >= 0");
  if (!use_msl && lambda_mse == 0.0) {
    throw std::invalid_argument("loss: objective is empty (no MSL, lambda_mse 0)");
  }
  if (schedule && !(schedule->start > 0.0 && schedule->end > 0.0)) {
    throw std::invalid_argument("loss: schedule endpoints must be > 0");
  }
}

namespace {

template <typename T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
  }
}

// Adds one sigmoid term into `grad`, returns its value.
template <typename T>
T sigmoid_term(const Tensor<T>& target, const Tensor<T>& pred, T c, T s,
               T* grad) {
  const std::size_t n = pred.numel();
  const T* y = target.data();
  const T* p = pred.data();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T sy = sigmoid<T>((y[i] - c) * s);
    const T sp = sigmoid<T>((p[i] - c) * s);
    const T d = sy - sp;
    total += d * d;
    grad[i] += T(-2) * d * sp * (T(1) - sp) * s;
  }
  return total;
}

}  // namespace

template <typename T>
LossValue<T> single_sigmoid_loss(const Tensor<T>& target, const Tensor<T>& pred,
                                 T c, T s) {
  check_pair(target, pred, "single_sigmoid_loss");
  LossValue<T> out;
  out.grad = Tensor<T>::zeros_like(pred);
  out.value = sigmoid_term(target, pred, c, s, out.grad.data());
  return out;
}

template <typename T>
LossValue<T> multi_sigmoid_loss(const Tensor<T>& target, const Tensor<T>& pred,
                                const LossConfig& cfg, std::optional<double> s) {
  check_pair(target, pred, "multi_sigmoid_loss");
  if (cfg.use_msl && cfg.critical_points.empty()) {
    throw std::invalid_argument("multi_sigmoid_loss: no critical points");
  }
  LossValue<T> out;
  out.grad = Tensor<T>::zeros_like(pred);
  T* g = out.grad.data();
  if (cfg.use_msl) {
    const T slope = static_cast<T>(cfg.effective_scale(s.value_or(cfg.scale)));
    for (double c : cfg.critical_points) {
      out.value += sigmoid_term(target, pred, static_cast<T>(c), slope, g);
    }
  }
  if (cfg.lambda_mse > 0.0) {
    const T lam = static_cast<T>(cfg.lambda_mse);
    const T* y = target.data();
    const T* p = pred.data();
    T sq = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const T d = p[i] - y[i];
      sq += d * d;
      g[i] += T(2) * lam * d;
    }
    out.value += lam * sq;
  }
  return out;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  hits += o.hits;
  misses += o.misses;
  false_alarms += o.false_alarms;
  correct_negatives += o.correct_negatives;
  return *this;
}

template <typename T>
CsiResult csi(std::span<const T> pred, std::span<const T> truth,
              double threshold) {
  if (pred.size() != truth.size()) {
    throw ShapeError("csi: " + std::to_string(pred.size()) + " predicted vs " +
                     std::to_string(truth.size()) + " observed pixels");
  }
  CsiResult r;
  auto& k = r.counts;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool o = static_cast<double>(truth[i]) >= threshold;
    if (p && o) {
      ++k.hits;
    } else if (o) {
      ++k.misses;
    } else if (p) {
      ++k.false_alarms;
    } else {
      ++k.correct_negatives;
    }
  }
  const std::uint64_t denom = k.hits + k.misses + k.false_alarms;
  if (denom > 0) r.csi = static_cast<double>(k.hits) / static_cast<double>(denom);
  return r;
}

template <typename T>
CsiResult csi(const Tensor<T>& pred, const Tensor<T>& truth, double threshold) {
  check_pair(pred, truth, "csi");
  return csi<T>(pred.values(), truth.values(), threshold);
}

namespace {
void check_sequences(const RadarSequence& a, const RadarSequence& b) {
  if (a.length() != b.length()) {
    throw ShapeError("sequence lengths differ: " + std::to_string(a.length()) +
                     " vs " + std::to_string(b.length()));
  }
  if (a.length() == 0) throw ShapeError("empty sequence");
  if (a.frames.shape() != b.frames.shape()) {
    throw ShapeError("frame sizes differ: " + shape_str(a.frames.shape()) +
                     " vs " + shape_str(b.frames.shape()));
  }
}
}  // namespace

double frame_mse(const RadarSequence& pred, const RadarSequence& truth) {
  check_sequences(pred, truth);
  double total = 0.0;
  const float* p = pred.frames.data();
  const float* y = truth.frames.data();
  for (std::size_t i = 0; i < pred.frames.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(y[i]);
    total += d * d;
  }
  return total / static_cast<double>(pred.length());
}

void Verification::add(const RadarSequence& pred, const RadarSequence& truth,
                       double threshold) {
  mse_sum += frame_mse(pred, truth);
  ++sequences;
  for (std::size_t t = 0; t < pred.length(); ++t) {
    const auto r = starbri::csi<float>(pred.frame(t), truth.frame(t), threshold);
    if (r.csi) {
      csi_sum += *r.csi;
      ++csi_frames;
    } else {
      ++undefined_frames;
    }
  }
}

double Verification::mse() const {
  return sequences ? mse_sum / static_cast<double>(sequences)
                   : std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> Verification::csi() const {
  if (csi_frames == 0) return std::nullopt;
  return csi_sum / static_cast<double>(csi_frames);
}

#define STARBRI_INSTANTIATE_LOSS(T)                                            \
  template LossValue<T> single_sigmoid_loss<T>(const Tensor<T>&,               \
                                               const Tensor<T>&, T, T);        \
  template LossValue<T> multi_sigmoid_loss<T>(                                 \
      const Tensor<T>&, const Tensor<T>&, const LossConfig&,                   \
      std::optional<double>);                                                  \
  template CsiResult csi<T>(std::span<const T>, std::span<const T>, double);   \
  template CsiResult csi<T>(const Tensor<T>&, const Tensor<T>&, double);

STARBRI_INSTANTIATE_LOSS(float)
STARBRI_INSTANTIATE_LOSS(double)

}  // namespace starbri
