#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "starbri/loss_metrics.hpp"
#include "starbri/network.hpp"

namespace starbri {

enum class OptimizerKind { Adam, Sgd };

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

struct TrainConfig {
  std::size_t batch_size = 8;
  std::uint64_t iterations = 2000;
  std::uint64_t eval_interval = 500;
  std::uint64_t log_interval = 10;
  std::size_t eval_samples = 0;  // test sequences used at eval points, 0 = all
  std::uint64_t seed = 1;
  std::uint64_t checkpoint_interval = 0;
  /// Per-route sampling weights; absent means uniform over sequences.
  std::optional<std::array<double, 3>> class_weights;
};

enum class Precision { Float32, Float64 };

std::string_view precision_name(Precision p);
std::optional<Precision> parse_precision(std::string_view name);

/// Everything needed to reproduce a run. Serialized into every checkpoint,
/// metric log and prediction sidecar.
struct RunConfig {
  NetworkConfig network = NetworkConfig::desk();
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;
  Precision precision = Precision::Float32;
  std::size_t threads = 1;

  void validate() const;
};

/// JSON text with sections "network", "loss", "optimizer", "training" and
/// top-level "precision" / "threads". Keys are sorted, so equal configs
/// serialize to identical bytes.
std::string to_json_text(const RunConfig& cfg, int indent = -1);

/// Overlays the JSON text on `base`. Missing keys keep their base values;
/// unknown keys are rejected.
RunConfig run_config_from_json(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Parses "start:end:iterations".
ScaleSchedule parse_scale_schedule(std::string_view text);

}  // namespace starbri
