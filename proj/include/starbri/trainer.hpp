#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "starbri/loss_metrics.hpp"
#include "starbri/network.hpp"
#include "starbri/optimizer.hpp"
#include "starbri/run_config.hpp"

namespace starbri {

struct StepResult {
  std::uint64_t iteration = 0;  // index of the step just taken
  double loss = 0.0;            // batch mean of per-sample objective / L
  double mse = 0.0;             // batch mean frame_mse
  double scale = 0.0;
  std::array<std::size_t, 3> route_counts{};
};

struct EvalReport {
  Verification model;
  Verification persistence;
  std::array<Verification, 3> model_by_route;
  std::array<Verification, 3> persistence_by_route;
};

/// Forecasts every sequence from its first cfg.context frames and scores the
/// next cfg.horizon frames, alongside the persistence baseline. `limit`
/// caps the number of sequences (0 = all).
template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const NetworkConfig& cfg,
                    std::span<const RadarSequence> seqs, std::size_t batch = 16,
                    std::size_t limit = 0);

/// Single-process trainer. Sampling depends only on (seed, iteration) over
/// the training set sorted by source id, so a run is independent of storage
/// order and resumes bit-exactly from (params, optimizer state, iteration).
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<RadarSequence> train);

  StepResult step();

  /// Training-set indices drawn at `iteration`.
  std::vector<std::size_t> sample(std::uint64_t iteration) const;
  double scale_at(std::uint64_t iteration) const;

  std::uint64_t iteration() const { return iteration_; }
  const RunConfig& config() const { return cfg_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }
  const OptimState<T>& optim() const { return optim_; }
  const std::vector<RadarSequence>& train_set() const { return train_; }
  Route route_of(std::size_t index) const { return routes_[index]; }

  void restore(ModelParams<T> params, OptimState<T> optim,
               std::uint64_t iteration);

 private:
  RunConfig cfg_;
  std::vector<RadarSequence> train_;
  std::vector<Route> routes_;
  std::array<std::vector<std::size_t>, 3> by_route_;
  std::array<double, 3> class_weights_{};
  ModelParams<T> params_;
  OptimState<T> optim_;
  std::uint64_t iteration_ = 0;
};

/// CSV metric log: "# config: <json>" then
/// iteration,split,loss,mse,csi,undefined_frame_count,s,route_counts
class MetricLog {
 public:
  MetricLog(std::ostream& os, const std::string& config_json);
  void train_row(const StepResult& r);
  void eval_row(std::uint64_t iteration, const std::string& split,
                const Verification& v, double scale);

 private:
  std::ostream& os_;
};

template <typename T>
struct TrainLoopOptions {
  std::uint64_t until = 0;  // stop after this many total iterations
  std::span<const RadarSequence> test;
  MetricLog* log = nullptr;
  std::function<void(const Trainer<T>&)> checkpoint;  // at checkpoint_interval
  std::function<void(const StepResult&)> on_step;
};

/// Steps until `until`, logging train rows every log_interval and test rows
/// every eval_interval and at the end.
template <typename T>
void train_loop(Trainer<T>& trainer, const TrainLoopOptions<T>& opts);

}  // namespace starbri
