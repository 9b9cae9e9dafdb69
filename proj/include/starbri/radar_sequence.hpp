#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "starbri/tensor.hpp"

namespace starbri {

enum class SequenceOrigin : std::uint8_t { Synthetic, File };

/// Ordered radar frames of normalized intensity in [0, 1], stored as one
/// [T, H, W] tensor.
struct RadarSequence {
  Tensor<float> frames;
  SequenceOrigin origin = SequenceOrigin::Synthetic;
  std::string source_id;

  std::size_t length() const { return frames.empty() ? 0 : frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
  std::size_t frame_size() const { return height() * width(); }

  std::span<const float> frame(std::size_t t) const {
    return frames.values().subspan(t * frame_size(), frame_size());
  }
  std::span<float> frame(std::size_t t) {
    return frames.values().subspan(t * frame_size(), frame_size());
  }

  /// Frames [begin, begin + count) as a new sequence.
  RadarSequence slice(std::size_t begin, std::size_t count) const;
};

}  // namespace starbri
