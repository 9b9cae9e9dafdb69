#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "starbri/tensor.hpp"

namespace starbri {

struct SlotReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool finite = true;
};

struct GradCheckReport {
  std::string name;
  double tolerance = 1e-4;
  double floor = 1e-6;  // gradient scale below which errors are absolute
  std::vector<SlotReport> slots;

  double max_rel_error() const;
  bool pass() const;
  std::string summary() const;
};

/// A scalar objective over named 64-bit slots. `analytic` returns one
/// gradient per slot, in slot order, at the current slot values.
struct GradProbe {
  std::string name;
  std::vector<std::pair<std::string, Tensor<double>*>> slots;
  std::function<double()> objective;
  std::function<std::vector<Tensor<double>>()> analytic;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences with step h on every element of every slot (or on
/// `max_per_slot` evenly spaced elements when nonzero). The error floor is
/// max(1e-6, 4 eps |f| / (h tolerance)), the finite-difference resolution.
GradCheckReport gradient_check(const GradProbe& probe, double h = 1e-5,
                               double tolerance = 1e-4,
                               std::size_t max_per_slot = 0);

/// Randomized checks of each differentiable kernel on `instances` shapes.
std::vector<GradCheckReport> op_gradient_checks(std::uint64_t seed,
                                                std::size_t instances = 5);

/// ConvLSTM cell and bridge step checks.
std::vector<GradCheckReport> cell_gradient_checks(std::uint64_t seed,
                                                  std::size_t instances = 5);

/// Whole network: 1 layer, 2 channels, 8x8 frames, T = L = 2, tolerance 1e-3.
GradCheckReport end_to_end_gradient_check(std::uint64_t seed, bool use_bridge = true);

}  // namespace starbri
