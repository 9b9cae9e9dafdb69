#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "starbri/network.hpp"
#include "starbri/radar_sequence.hpp"

namespace starbri {

// ---------------------------------------------------------------------------
// Synthetic echoes

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Cell population for one rainfall regime. Cells are isotropic Gaussians
/// advected at constant velocity (a shared steering wind plus a per-cell
/// perturbation) with exponential growth or decay.
struct RegimeSpec {
  std::size_t min_cells = 0;
  std::size_t max_cells = 0;
  Range amplitude;
  Range sigma;      // pixels
  Range wind;       // steering speed, pixels per frame
  Range jitter;     // per-cell speed perturbation, pixels per frame
  Range growth;     // log-amplitude change per frame
};

struct GenConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t frames = 20;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::array<double, 3> class_mix{0.592, 0.254, 0.154};  // light, moderate, heavy
  std::array<RegimeSpec, 3> regimes;

  static GenConfig desk();
  /// 100x100 frames with cell sizes and speeds scaled up accordingly.
  static GenConfig full_scale();

  /// Throws std::invalid_argument naming the achievable bounds when the
  /// class mix cannot be produced.
  void validate() const;
};

/// Regime of sequence `index`: a seeded permutation of exact per-class counts.
std::vector<Route> regime_plan(const GenConfig& cfg);

std::vector<RadarSequence> synth_generate(const GenConfig& cfg);
RadarSequence synth_sequence(const GenConfig& cfg, std::size_t index,
                             Route regime);

// ---------------------------------------------------------------------------
// Windowing, filtering, splitting

std::vector<RadarSequence> sliding_window(const RadarSequence& seq,
                                          std::size_t length = 20,
                                          std::size_t stride = 1);

double mean_intensity(const RadarSequence& seq);

std::vector<RadarSequence> filter_rainless(std::span<const RadarSequence> seqs,
                                           double min_mean = 0.005);

struct IntensitySplit {
  std::array<std::vector<std::size_t>, 3> members;  // input indices per Route
  std::array<double, 3> proportions{};
  std::vector<RouteStats> stats;  // per input sequence
};

/// Partitions by route statistics over the first `frames` frames (all when 0).
IntensitySplit split_by_intensity(std::span<const RadarSequence> seqs,
                                  const RouteThresholds& thresholds,
                                  std::size_t frames = 0);

/// Nested-box thresholds whose class proportions best match `target`. Box
/// corners are taken at equal quantiles of mu and delta, searched by bisection.
RouteThresholds calibrate_thresholds(std::span<const RouteStats> stats,
                                     std::array<double, 3> target = {
                                         0.592, 0.254, 0.154});

// ---------------------------------------------------------------------------
// RSEQ files: "RSEQ", u32 version, u32 T, u32 H, u32 W, f32 payload (LE)

inline constexpr std::uint32_t kRseqVersion = 1;
inline constexpr std::size_t kRseqHeaderBytes = 20;

std::size_t rseq_file_size(std::size_t t, std::size_t h, std::size_t w);
void rseq_write(const RadarSequence& seq, const std::filesystem::path& path);
RadarSequence rseq_read(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets and manifests

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  RouteStats stats;
  Route route = Route::Light;
  std::string split;  // "train" or "test"
};

struct Manifest {
  RouteThresholds thresholds;
  std::size_t context = 10;
  std::string config_json;  // generator configuration, for provenance
  std::vector<ManifestEntry> entries;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct Dataset {
  std::vector<RadarSequence> train;
  std::vector<RadarSequence> test;
  RouteThresholds thresholds;
};

struct DatasetOptions {
  double test_fraction = 0.2;
  double min_mean = 0.005;
  std::size_t context = 10;
  bool calibrate = true;
};

/// Generates, splits train/test by a seeded permutation, filters rain-less
/// training sequences and calibrates thresholds on the training set.
Dataset make_dataset(const GenConfig& gen, const DatasetOptions& opts = {});

/// Writes every sequence as RSEQ under dir/{train,test}/ plus dir/manifest.jsonl.
Manifest save_dataset(const Dataset& data, const std::filesystem::path& dir,
                      std::size_t context, const std::string& config_json);

/// Reads a manifest directory back; source ids are the relative paths.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace starbri
