#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "starbri/radar_sequence.hpp"
#include "starbri/tensor.hpp"

namespace starbri {

inline constexpr double kMaxDbz = 70.0;

/// R / 70, clamping R into [0, 70] first. Out-of-range input emits a warning
/// on stderr (once per process).
double normalize(double dbz);
double denormalize(double p);

/// Linear ramp from `start` to `end` over `iterations`, then held at `end`.
struct ScaleSchedule {
  double start = 1.0;
  double end = 40.0;
  std::uint64_t iterations = 20000;
};

double scale_schedule(std::uint64_t iteration, const ScaleSchedule& schedule);

struct LossConfig {
  std::vector<double> critical_points{20.0 / 70.0, 30.0 / 70.0, 40.0 / 70.0};
  double scale = 15.0;
  double lambda_mse = 1.0;
  bool use_msl = true;    // false: the objective is lambda_mse * MSE only
  bool raw_scale = false;  // slope applied per dBZ instead of per unit
  std::optional<ScaleSchedule> schedule;

  double effective_scale(double s) const { return raw_scale ? s * kMaxDbz : s; }
  void validate() const;
};

template <typename T>
struct LossValue {
  T value{};
  Tensor<T> grad;  // d value / d prediction
};

/// || sigmoid((target - c) s) - sigmoid((pred - c) s) ||^2
template <typename T>
LossValue<T> single_sigmoid_loss(const Tensor<T>& target, const Tensor<T>& pred,
                                 T c, T s);

/// Sum of single sigmoid losses over the critical points (when use_msl) plus
/// lambda_mse * ||target - pred||^2, at slope `s` (cfg.scale when absent).
template <typename T>
LossValue<T> multi_sigmoid_loss(const Tensor<T>& target, const Tensor<T>& pred,
                                const LossConfig& cfg,
                                std::optional<double> s = std::nullopt);

struct ConfusionCounts {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t false_alarms = 0;
  std::uint64_t correct_negatives = 0;

  std::uint64_t total() const {
    return hits + misses + false_alarms + correct_negatives;
  }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct CsiResult {
  std::optional<double> csi;  // nullopt when hits + misses + false alarms == 0
  ConfusionCounts counts;
};

inline constexpr double kCsiThreshold = 20.0 / 70.0;

template <typename T>
CsiResult csi(std::span<const T> pred, std::span<const T> truth,
              double threshold = kCsiThreshold);

template <typename T>
CsiResult csi(const Tensor<T>& pred, const Tensor<T>& truth,
              double threshold = kCsiThreshold);

/// (1/L) sum_t ||truth_t - pred_t||^2 over normalized values.
double frame_mse(const RadarSequence& pred, const RadarSequence& truth);

/// Running verification scores over many forecasts. CSI is the mean over
/// frames with a defined score; undefined frames are counted separately.
struct Verification {
  double mse_sum = 0.0;
  std::size_t sequences = 0;
  double csi_sum = 0.0;
  std::size_t csi_frames = 0;
  std::size_t undefined_frames = 0;

  void add(const RadarSequence& pred, const RadarSequence& truth,
           double threshold = kCsiThreshold);
  double mse() const;
  std::optional<double> csi() const;
};

}  // namespace starbri
