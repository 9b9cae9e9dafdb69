#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "fd_oracle.hpp"
#include "starbri/gemm.hpp"
#include "starbri/gradcheck.hpp"
#include "starbri/ops.hpp"

using namespace starbri;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

}  // namespace

// --- gemm ------------------------------------------------------------------

TEST(Gemm, MatchesNaiveProductAcrossShapes) {
  std::mt19937_64 rng(3);
  for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 33, 5}, {9, 65, 300},
                         {17, 3, 257}, {64, 40, 12}}) {
    auto a = oracle::random_tensor({m, k}, rng);
    auto b = oracle::random_tensor({k, n}, rng);
    Tensor<double> c({m, n}, 0.5);
    gemm<double>(m, n, k, a.data(), k, b.data(), n, c.data(), n, true);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.5;
        for (std::size_t p = 0; p < k; ++p) ref += a[i * k + p] * b[p * n + j];
        EXPECT_NEAR(c[i * n + j], ref, 1e-12 * (1 + k));
      }
    Tensor<double> bt({n, k});
    transpose(k, n, b.data(), bt.data());
    Tensor<double> c2({m, n});
    gemm_bt<double>(m, n, k, a.data(), k, bt.data(), k, c2.data(), n, false);
    for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(c2[i], c[i] - 0.5, 1e-12 * (1 + k));
  }
}

// --- conv2d ----------------------------------------------------------------

TEST(Conv2d, IdentityKernelIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({1, 1, 4, 4}, rng);
  Tensor<double> w({1, 1, 1, 1}, 1.0), b({1});
  EXPECT_EQ(conv2d(x, w, b, 1, 0).out, x);
  auto x3 = oracle::random_tensor({3, 2, 5, 6}, rng);
  Tensor<double> eye({2, 2, 1, 1});
  eye.at(0, 0, 0, 0) = eye.at(1, 1, 0, 0) = 1.0;
  EXPECT_EQ(conv2d(x3, eye, Tensor<double>({2}), 1, 0).out, x3);
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  Tensor<double> x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0), b({1});
  const auto y = conv2d(x, w, b, 1, 1).out;
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 9.0);
  for (auto [r, c] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) {
    EXPECT_DOUBLE_EQ(y.at(0, 0, r, c), 4.0);
  }
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, StrideTwoHalvesFullScaleFrame) {
  Tensor<float> x({1, 1, 100, 100}), w({64, 1, 4, 4}), b({64});
  EXPECT_EQ(conv2d(x, w, b, 2, 1).out.shape(), (Shape{1, 64, 50, 50}));
}

TEST(Conv2d, MatchesDirectSummation) {
  std::mt19937_64 rng(11);
  struct Case { std::size_t n, cin, h, w, cout, k; int stride, pad; };
  // Batches large enough to span several internal chunks.
  for (Case c : {Case{1, 1, 5, 5, 1, 3, 1, 1}, Case{2, 3, 7, 6, 4, 3, 1, 0},
                 Case{3, 2, 8, 8, 5, 4, 2, 1}, Case{9, 4, 4, 4, 6, 3, 1, 1},
                 Case{40, 2, 3, 5, 3, 2, 2, 1}}) {
    auto x = oracle::random_tensor({c.n, c.cin, c.h, c.w}, rng);
    auto w = oracle::random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    auto b = oracle::random_tensor({c.cout}, rng);
    EXPECT_LT(max_abs_diff(conv2d(x, w, b, c.stride, c.pad).out,
                           oracle::conv2d(x, w, b, c.stride, c.pad)),
              1e-12);
  }
}

TEST(Conv2d, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor({2, 2, 5, 4}, rng);
  auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
  auto b = oracle::random_tensor({3}, rng);
  auto probe = oracle::random_tensor({2, 3, 3, 2}, rng);  // stride 2, pad 1
  auto f = [&] { return oracle::dot(oracle::conv2d(x, w, b, 2, 1), probe); };
  const auto g = conv2d_backward(conv2d(x, w, b, 2, 1).ctx, probe);
  EXPECT_LT(oracle::max_rel_error(g.input, oracle::central_gradient(x, f)), 1e-6);
  EXPECT_LT(oracle::max_rel_error(g.weight, oracle::central_gradient(w, f)), 1e-6);
  EXPECT_LT(oracle::max_rel_error(g.bias, oracle::central_gradient(b, f)), 1e-6);
}

TEST(Conv2d, RejectsBadShapes) {
  Tensor<double> x({1, 2, 4, 4}), w({3, 1, 3, 3}), b({3});
  EXPECT_THROW(conv2d(x, w, b, 1, 1), ShapeError);
  Tensor<double> w2({3, 2, 7, 7});
  EXPECT_THROW(conv2d(x, w2, b, 1, 1), ShapeError);
  Tensor<double> w3({3, 2, 3, 3});
  EXPECT_THROW(conv2d(x, w3, Tensor<double>({2}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, w3, b, 0, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor<double>({2, 4, 4}), w3, b, 1, 1), ShapeError);
}

TEST(Conv2d, NonFiniteInputIsReportedWhenChecksAreOn) {
  Tensor<double> x({1, 1, 3, 3}), w({1, 1, 1, 1}, 1.0), b({1});
  x[4] = std::numeric_limits<double>::quiet_NaN();
  ASSERT_TRUE(finite_checks_enabled());
  EXPECT_THROW(conv2d(x, w, b, 1, 0), NumericError);
  set_finite_checks(false);
  EXPECT_NO_THROW(conv2d(x, w, b, 1, 0));
  set_finite_checks(true);
}

// --- conv_transpose2d ------------------------------------------------------

TEST(ConvTranspose2d, DoublesQuarterScaleFeature) {
  Tensor<float> x({1, 64, 25, 25}), w({64, 8, 4, 4}), b({8});
  EXPECT_EQ(conv_transpose2d(x, w, b, 2, 1).out.shape(), (Shape{1, 8, 50, 50}));
}

TEST(ConvTranspose2d, UnitKernelIsIdentity) {
  Tensor<double> x({1, 1, 1, 1}, 0.37), w({1, 1, 1, 1}, 1.0), b({1});
  EXPECT_DOUBLE_EQ(conv_transpose2d(x, w, b, 1, 0).out[0], 0.37);
}

TEST(ConvTranspose2d, MatchesScatterOracle) {
  std::mt19937_64 rng(13);
  for (auto [n, cin, hw, cout, k, s, p] :
       {std::array<int, 7>{1, 2, 3, 3, 3, 1, 1}, {2, 3, 4, 2, 4, 2, 1}, {70, 2, 2, 3, 4, 2, 1},
        {3, 1, 5, 2, 3, 2, 0}}) {
    auto x = oracle::random_tensor({std::size_t(n), std::size_t(cin), std::size_t(hw), std::size_t(hw)}, rng);
    auto w = oracle::random_tensor({std::size_t(cin), std::size_t(cout), std::size_t(k), std::size_t(k)}, rng);
    auto b = oracle::random_tensor({std::size_t(cout)}, rng);
    EXPECT_LT(max_abs_diff(conv_transpose2d(x, w, b, s, p).out,
                           oracle::conv_transpose2d(x, w, b, s, p)),
              1e-12);
  }
}

TEST(ConvTranspose2d, IsTheAdjointOfConv2d) {
  // conv_transpose2d(g; W) equals d<conv2d(x; W), g>/dx with the weight read
  // as [Cout_conv, Cin_conv, K, K] = [Cin_t, Cout_t, K, K].
  std::mt19937_64 rng(17);
  auto x = oracle::random_tensor({1, 2, 3, 3}, rng);
  auto w = oracle::random_tensor({4, 2, 3, 3}, rng);
  Tensor<double> b({4});
  const auto fwd = conv2d(x, w, b, 1, 1);
  auto g = oracle::random_tensor(fwd.out.shape(), rng);
  const auto back = conv2d_backward(fwd.ctx, g);
  const auto t = conv_transpose2d(g, w, Tensor<double>({2}), 1, 1).out;
  EXPECT_LT(max_abs_diff(t, back.input), 1e-12);
}

TEST(ConvTranspose2d, RejectsMismatchedWeight) {
  Tensor<double> x({1, 3, 4, 4}), w({2, 3, 4, 4}), b({3});
  EXPECT_THROW(conv_transpose2d(x, w, b, 2, 1), ShapeError);
}

// --- group_norm ------------------------------------------------------------

TEST(GroupNorm, ConstantInputNormalizesToBeta) {
  Tensor<double> x({2, 4, 3, 3}, 5.0);
  Tensor<double> gamma({4}, 1.0), beta({4});
  const auto zero = group_norm(x, 2, gamma, beta).out;
  for (double v : zero.values()) EXPECT_NEAR(v, 0.0, 1e-6);
  beta.fill(0.7);
  const auto shifted = group_norm(x, 2, gamma, beta).out;
  for (double v : shifted.values()) EXPECT_NEAR(v, 0.7, 1e-6);
}

TEST(GroupNorm, ZeroVarianceGroupsEqualBetaPerChannel) {
  std::mt19937_64 rng(2);
  Tensor<double> x({1, 4, 2, 2});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) x[c * 4 + i] = c < 2 ? 3.0 : rng() % 7;
  Tensor<double> gamma({4}, 2.0);
  Tensor<double> beta({4}, std::vector<double>{0.1, -0.2, 0.3, 0.4});
  const auto y = group_norm(x, 2, gamma, beta).out;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y[i], 0.1, 1e-9);
    EXPECT_NEAR(y[4 + i], -0.2, 1e-9);
  }
}

TEST(GroupNorm, RecomputedStatisticsAreStandardized) {
  std::mt19937_64 rng(23);
  auto x = oracle::random_tensor({2, 64, 5, 5}, rng, -3.0, 5.0);
  Tensor<double> gamma({64}, 1.0), beta({64});
  const auto y = group_norm(x, 4, gamma, beta, 1e-5).out;
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t g = 0; g < 4; ++g) {
      const auto m = oracle::group_moments(y, s, g * 16, g * 16 + 16);
      EXPECT_NEAR(m.mean, 0.0, 1e-12);
      EXPECT_NEAR(m.var, 1.0, 1e-3);
    }
}

TEST(GroupNorm, RejectsIndivisibleGroups) {
  Tensor<double> x({1, 6, 2, 2}), gamma({6}, 1.0), beta({6});
  EXPECT_THROW(group_norm(x, 4, gamma, beta), ShapeError);
}

TEST(GroupNorm, GroupCountRule) {
  EXPECT_EQ(group_count(64, 16), 4u);
  EXPECT_EQ(group_count(32, 16), 2u);
  EXPECT_EQ(group_count(96, 16), 6u);
  EXPECT_EQ(group_count(3, 16), 1u);
  EXPECT_EQ(group_count(6, 4), 1u);
  EXPECT_EQ(group_count(12, 5), 2u);
}

// --- elementwise -----------------------------------------------------------

TEST(Elementwise, ZeroInputs) {
  Tensor<double> z({2, 3});
  const auto s = elementwise(Pointwise::Sigmoid, z).out;
  for (double v : s.values()) EXPECT_EQ(v, 0.5);
  const auto t = elementwise(Pointwise::Tanh, z).out;
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
  Tensor<double> a({2, 3}, 4.2);
  const auto h = elementwise(Pointwise::Hadamard, a, z).out;
  for (double v : h.values()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, SigmoidIsStableAtExtremes) {
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(1.3), oracle::sigmoid(1.3), 1e-15);
}

TEST(Elementwise, BinaryKindsRequireEqualShapes) {
  Tensor<double> a({2, 3}), b({3, 2});
  EXPECT_THROW(elementwise(Pointwise::Add, a, b), ShapeError);
  EXPECT_THROW(elementwise(Pointwise::Hadamard, a, b), ShapeError);
}

// --- concat / split --------------------------------------------------------

TEST(ConcatSplit, ShapesAndRoundTrip) {
  std::mt19937_64 rng(29);
  const std::array<Tensor<double>, 2> parts{oracle::random_tensor({1, 2, 3, 3}, rng),
                                            oracle::random_tensor({1, 2, 3, 3}, rng)};
  const auto cat = concat_channels<double>(parts);
  EXPECT_EQ(cat.out.shape(), (Shape{1, 4, 3, 3}));
  const std::array<std::size_t, 2> sizes{2, 2};
  const auto back = split_channels<double>(cat.out, sizes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], parts[0]);
  EXPECT_EQ(back[1], parts[1]);
}

TEST(ConcatSplit, RoundTripIsExactForUnevenParts) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor<double>> parts;
    std::vector<std::size_t> sizes;
    const std::size_t k = 1 + rng() % 4;
    for (std::size_t i = 0; i < k; ++i) {
      sizes.push_back(1 + rng() % 5);
      parts.push_back(oracle::random_tensor({3, sizes.back(), 2, 4}, rng));
    }
    const auto cat = concat_channels<double>(parts);
    EXPECT_EQ(split_channels<double>(cat.out, sizes), parts);
  }
}

TEST(ConcatSplit, BackwardOfOnesIsOnes) {
  const std::array<Tensor<double>, 2> parts{Tensor<double>({1, 1, 2, 2}),
                                            Tensor<double>({1, 3, 2, 2})};
  const auto cat = concat_channels<double>(parts);
  const auto grads = concat_channels_backward(cat.ctx, Tensor<double>({1, 4, 2, 2}, 1.0));
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[0], Tensor<double>({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(grads[1], Tensor<double>({1, 3, 2, 2}, 1.0));
}

TEST(ConcatSplit, MismatchedPartsAreRejected) {
  const std::array<Tensor<double>, 2> parts{Tensor<double>({1, 1, 2, 2}),
                                            Tensor<double>({1, 1, 3, 2})};
  EXPECT_THROW(concat_channels<double>(parts), ShapeError);
  const std::array<std::size_t, 2> sizes{1, 2};
  EXPECT_THROW(split_channels<double>(Tensor<double>({1, 4, 2, 2}), sizes), ShapeError);
}

// --- gradient harness over every kernel -----------------------------------

TEST(TensorCoreGradients, EveryKernelPassesFiniteDifferences) {
  const auto reports = op_gradient_checks(101, 5);
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) {
    EXPECT_TRUE(r.pass()) << r.summary();
    EXPECT_LT(r.max_rel_error(), 1e-4) << r.name;
  }
}
