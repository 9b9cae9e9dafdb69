#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "starbri/run_config.hpp"
#include "starbri/tensor.hpp"

namespace starbri {

/// Moments mirror the parameter list in visit order. `steps` counts the
/// updates each tensor actually received: tensors whose gradient is exactly
/// zero (an encoder column no sample was routed to) are left untouched.
template <typename T>
struct OptimState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::vector<std::uint64_t> steps;
  std::uint64_t step = 0;

  bool empty() const { return m.empty(); }
  friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// One Adam (or plain SGD) update. Throws NumericError naming the first
/// parameter with a non-finite gradient, ShapeError on any mismatch.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>* const> grads,
               std::span<const std::string> names, OptimState<T>& state,
               const OptimConfig& cfg);

/// Same over any structure exposing visit(name, tensor).
template <typename T, typename P>
void adam_step(P& params, const P& grads, OptimState<T>& state,
               const OptimConfig& cfg) {
  std::vector<Tensor<T>*> p;
  std::vector<std::string> names;
  params.visit([&](std::string_view name, Tensor<T>& t) {
    p.push_back(&t);
    names.emplace_back(name);
  });
  std::vector<const Tensor<T>*> g;
  grads.visit([&](std::string_view, const Tensor<T>& t) { g.push_back(&t); });
  adam_step<T>(std::span<Tensor<T>* const>(p), std::span<const Tensor<T>* const>(g),
               std::span<const std::string>(names), state, cfg);
}

}  // namespace starbri
