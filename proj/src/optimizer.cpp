#include "starbri/optimizer.hpp"

#include <cmath>

namespace starbri {

template <typename T>
void adam_step(std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>* const> grads,
               std::span<const std::string> names, OptimState<T>& st,
               const OptimConfig& cfg) {
  if (params.size() != grads.size() || params.size() != names.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) +
                     " parameters, " + std::to_string(grads.size()) + " gradients");
  }
  if (st.empty()) {
    for (const Tensor<T>* p : params) {
      st.m.push_back(Tensor<T>::zeros_like(*p));
      st.v.push_back(Tensor<T>::zeros_like(*p));
    }
    st.steps.assign(params.size(), 0);
  }
  if (st.m.size() != params.size() || st.v.size() != params.size() ||
      st.steps.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " +
                     std::to_string(st.m.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  }

  double norm_sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& g = *grads[i];
    if (g.shape() != params[i]->shape() || st.m[i].shape() != g.shape()) {
      throw ShapeError("adam_step: gradient " + shape_str(g.shape()) +
                       " does not match parameter '" + names[i] + "' " +
                       shape_str(params[i]->shape()));
    }
    for (T x : g.values()) {
      if (!std::isfinite(x)) {
        throw NumericError("adam_step: non-finite gradient in parameter '" +
                           names[i] + "'");
      }
      norm_sq += static_cast<double>(x) * static_cast<double>(x);
    }
  }
  T clip = T(1);
  if (cfg.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg.clip_norm) clip = static_cast<T>(cfg.clip_norm / norm);
  }

  ++st.step;
  const T lr = static_cast<T>(cfg.lr);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& g = *grads[i];
    bool any = false;
    for (T x : g.values()) any = any || x != T(0);
    if (!any) continue;

    T* p = params[i]->data();
    const T* gd = g.data();
    const std::size_t n = g.numel();
    if (cfg.kind == OptimizerKind::Sgd) {
      for (std::size_t k = 0; k < n; ++k) p[k] -= lr * clip * gd[k];
      ++st.steps[i];
      continue;
    }
    const std::uint64_t t = ++st.steps[i];
    const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(t)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(t)));
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    for (std::size_t k = 0; k < n; ++k) {
      const T gk = gd[k] * clip;
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(std::span<Tensor<float>* const>,
                               std::span<const Tensor<float>* const>,
                               std::span<const std::string>, OptimState<float>&,
                               const OptimConfig&);
template void adam_step<double>(std::span<Tensor<double>* const>,
                                std::span<const Tensor<double>* const>,
                                std::span<const std::string>, OptimState<double>&,
                                const OptimConfig&);

}  // namespace starbri
