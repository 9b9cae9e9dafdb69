#include <gtest/gtest.h>

#include <array>
#include <random>

#include "fd_oracle.hpp"
#include "starbri/star_bridge.hpp"

using namespace starbri;

namespace {

BridgeParams<double> random_bridge(std::size_t layers, std::size_t hid, std::size_t cpg,
                                   std::mt19937_64& rng) {
  auto p = BridgeParams<double>::init(layers, hid, cpg, rng);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  p.visit([&](std::string_view, Tensor<double>& t) {
    for (auto& v : t.values()) v += d(rng);
  });
  return p;
}

}  // namespace

TEST(BridgeStep, ZeroWeightsGiveZeroResiduals) {
  std::mt19937_64 rng(1);
  auto p = BridgeParams<double>::zeros(2, 3, 3);
  p.gamma.fill(1.0);  // gamma is irrelevant once the fused map is constant
  const std::array<Tensor<double>, 2> h{oracle::random_tensor({2, 3, 4, 4}, rng),
                                        oracle::random_tensor({2, 3, 4, 4}, rng)};
  const auto state = bridge_step<double>(h, p).first;
  ASSERT_EQ(state.residuals.size(), 2u);
  for (const auto& r : state.residuals)
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(BridgeStep, FullScaleShapes) {
  std::mt19937_64 rng(2);
  const auto p = BridgeParams<float>::init(2, 64, 16, rng);
  EXPECT_EQ(p.w1.shape(), (Shape{128, 128, 1, 1}));
  const std::array<Tensor<float>, 2> h{Tensor<float>({1, 64, 25, 25}, 0.1f),
                                       Tensor<float>({1, 64, 25, 25}, -0.2f)};
  const auto [state, ctx] = bridge_step<float>(h, p);
  ASSERT_EQ(state.residuals.size(), 2u);
  for (const auto& r : state.residuals) EXPECT_EQ(r.shape(), (Shape{1, 64, 25, 25}));
}

TEST(BridgeStep, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  auto p = random_bridge(2, 2, 2, rng);
  std::array<Tensor<double>, 2> h{oracle::random_tensor({1, 2, 3, 3}, rng),
                                  oracle::random_tensor({1, 2, 3, 3}, rng)};
  const std::array<Tensor<double>, 2> probe{oracle::random_tensor({1, 2, 3, 3}, rng),
                                            oracle::random_tensor({1, 2, 3, 3}, rng)};
  auto f = [&] {
    const auto s = bridge_step<double>(h, p).first;
    return oracle::dot(s.residuals[0], probe[0]) + oracle::dot(s.residuals[1], probe[1]);
  };
  const auto ctx = bridge_step<double>(h, p).second;
  const auto g = bridge_step_backward<double>(ctx, p, probe);
  EXPECT_LT(oracle::max_rel_error(g.hidden[0], oracle::central_gradient(h[0], f)), 1e-5);
  EXPECT_LT(oracle::max_rel_error(g.hidden[1], oracle::central_gradient(h[1], f)), 1e-5);
  EXPECT_LT(oracle::max_rel_error(g.params.w1, oracle::central_gradient(p.w1, f)), 1e-5);
  EXPECT_LT(oracle::max_rel_error(g.params.gamma, oracle::central_gradient(p.gamma, f)), 1e-5);
  EXPECT_LT(oracle::max_rel_error(g.params.beta, oracle::central_gradient(p.beta, f)), 1e-5);
}

TEST(BridgeStep, LayerSwapIsCovariant) {
  // Swapping the layer blocks of W1 (rows and columns), b1, gamma and beta
  // swaps the residuals. One layer per norm group keeps the groups aligned.
  std::mt19937_64 rng(4);
  const std::size_t hid = 2;
  const auto p = random_bridge(2, hid, hid, rng);
  auto q = p;
  const std::size_t c = 2 * hid;
  auto swap_idx = [&](std::size_t i) { return (i + hid) % c; };
  for (std::size_t o = 0; o < c; ++o) {
    for (std::size_t i = 0; i < c; ++i) q.w1[swap_idx(o) * c + swap_idx(i)] = p.w1[o * c + i];
    q.b1[swap_idx(o)] = p.b1[o];
    q.gamma[swap_idx(o)] = p.gamma[o];
    q.beta[swap_idx(o)] = p.beta[o];
  }
  const std::array<Tensor<double>, 2> h{oracle::random_tensor({1, hid, 3, 3}, rng),
                                        oracle::random_tensor({1, hid, 3, 3}, rng)};
  const std::array<Tensor<double>, 2> swapped{h[1], h[0]};
  const auto a = bridge_step<double>(h, p).first;
  const auto b = bridge_step<double>(swapped, q).first;
  for (std::size_t i = 0; i < a.residuals[0].numel(); ++i) {
    EXPECT_NEAR(a.residuals[0][i], b.residuals[1][i], 1e-12);
    EXPECT_NEAR(a.residuals[1][i], b.residuals[0][i], 1e-12);
  }
}

TEST(BridgeStep, RejectsMismatchedLayers) {
  const auto p = BridgeParams<double>::zeros(2, 2, 2);
  const std::array<Tensor<double>, 2> h{Tensor<double>({1, 2, 3, 3}),
                                        Tensor<double>({1, 2, 4, 3})};
  EXPECT_THROW(bridge_step<double>(h, p), ShapeError);
  const std::array<Tensor<double>, 1> one{Tensor<double>({1, 2, 3, 3})};
  EXPECT_THROW(bridge_step<double>(one, p), ShapeError);
}

TEST(ApplyBridge, EmptyAndZeroStatesAreIdentity) {
  std::mt19937_64 rng(5);
  const std::array<Tensor<double>, 2> x{oracle::random_tensor({1, 2, 3, 3}, rng),
                                        oracle::random_tensor({1, 2, 3, 3}, rng)};
  const auto same = apply_bridge<double>(x, BridgeState<double>{});
  EXPECT_EQ(same[0], x[0]);
  EXPECT_EQ(same[1], x[1]);
  BridgeState<double> zero{{Tensor<double>({1, 2, 3, 3}), Tensor<double>({1, 2, 3, 3})}};
  const auto z = apply_bridge<double>(x, zero);
  EXPECT_EQ(z[0], x[0]);
  EXPECT_EQ(z[1], x[1]);
}

TEST(ApplyBridge, AddsResidualsElementwise) {
  std::mt19937_64 rng(6);
  const std::array<Tensor<double>, 2> x{oracle::random_tensor({2, 1, 2, 2}, rng),
                                        oracle::random_tensor({2, 1, 2, 2}, rng)};
  BridgeState<double> s{{oracle::random_tensor({2, 1, 2, 2}, rng),
                         oracle::random_tensor({2, 1, 2, 2}, rng)}};
  const auto y = apply_bridge<double>(x, s);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y[l][i], x[l][i] + s.residuals[l][i]);
  BridgeState<double> bad{{Tensor<double>({2, 1, 2, 2})}};
  EXPECT_THROW(apply_bridge<double>(x, bad), ShapeError);
}
