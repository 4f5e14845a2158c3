#include <gtest/gtest.h>

#include <cmath>

#include "plglue/adaptivity.hpp"
#include "test_util.hpp"

namespace plg {
namespace {

using testing::random_tensor;

bool exit_now(const std::vector<double>& c, double lambda, double alpha) {
  return should_exit<double>(std::span<const double>(c), lambda, alpha);
}

TEST(Confidence, ZeroWeightsGiveOneHalf) {
  const std::size_t d = 4;
  MlpT<TensorD> zero{TensorD({d}), TensorD({d}), {TensorD({2 * d, d}), TensorD({2 * d})},
                     {TensorD({1, 2 * d}), TensorD({1})}};
  std::mt19937_64 rng(1);
  for (double c : node_confidences(random_tensor<double>({5, d}, rng), zero)) EXPECT_EQ(c, 0.5);
}

TEST(Confidence, MatchesDoubleOracle) {
  auto params = testing::random_params<double>(testing::small_config(3), 2, 1.0);
  std::mt19937_64 rng(3);
  for (const auto& mlp : params.tree.confidence) {
    auto x = random_tensor<double>({9, 8}, rng, -2, 2);
    auto c = node_confidences(x, mlp);
    auto ref = testing::mlp(testing::to_mat(x), mlp);
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_NEAR(c[i], testing::sigmoid(ref[i][0]), 1e-6);
      EXPECT_GT(c[i], 0.0);
      EXPECT_LT(c[i], 1.0);
    }
    // Float path agrees with the double one.
    auto cf = node_confidences(x.cast<float>(), MlpT<Tensor>{mlp.norm_gain.cast<float>(),
                                                            mlp.norm_bias.cast<float>(),
                                                            {mlp.hidden.weight.cast<float>(),
                                                             mlp.hidden.bias.cast<float>()},
                                                            {mlp.out.weight.cast<float>(),
                                                             mlp.out.bias.cast<float>()}});
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(cf[i], c[i], 1e-6);
  }
}

TEST(ShouldExit, Examples) {
  std::vector<double> c = {0.1, 0.2, 0.95, 0.3};
  EXPECT_TRUE(exit_now(c, 0.9, 0.0));
  EXPECT_FALSE(exit_now({0.1, 0.2}, 0.9, 0.0));
  EXPECT_FALSE(exit_now({0.99, 0.99, 0.99}, 0.9, 1.0));

  std::vector<double> ten(10, 0.1);
  for (int i = 0; i < 7; ++i) ten[i] = 0.95;
  EXPECT_TRUE(exit_now(ten, 0.9, 0.65));
  EXPECT_FALSE(exit_now(ten, 0.9, 0.7));
  EXPECT_FALSE(exit_now({}, 0.5, 0.0));
}

TEST(ShouldExit, CountsBothImagesTogether) {
  std::vector<double> a = {0.95, 0.95, 0.95}, b = {0.1};
  EXPECT_TRUE(should_exit<double>(std::span<const double>(a), std::span<const double>(b), 0.9, 0.7));
  EXPECT_FALSE(should_exit<double>(std::span<const double>(a), std::span<const double>(b), 0.9, 0.75));
  std::vector<double> none;
  EXPECT_FALSE(
      should_exit<double>(std::span<const double>(none), std::span<const double>(none), 0.9, 0.0));
}

TEST(ShouldExit, ConfidenceEqualToLambdaIsNotConfident) {
  EXPECT_FALSE(exit_now({0.9}, 0.9, 0.0));
}

TEST(ShouldExit, MonotoneInConfidenceLambdaAndAlpha) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> c(1 + trial % 13);
    for (auto& v : c) v = u(rng);
    const double lambda = u(rng), alpha = u(rng);
    if (!exit_now(c, lambda, alpha)) continue;
    auto raised = c;
    raised[trial % c.size()] = std::min(1.0, raised[trial % c.size()] + u(rng));
    EXPECT_TRUE(exit_now(raised, lambda, alpha));
    EXPECT_TRUE(exit_now(c, lambda * u(rng), alpha));
    EXPECT_TRUE(exit_now(c, lambda, alpha * u(rng)));
  }
}

TEST(ExitPolicy, DefaultScheduleDecaysTowardPointEight) {
  EXPECT_DOUBLE_EQ(default_lambda(0, 9), 0.9);
  EXPECT_NEAR(default_lambda(9, 9), 0.8 + 0.1 * std::exp(-4.0), 1e-15);
  for (std::size_t l = 1; l < 9; ++l) EXPECT_LT(default_lambda(l, 9), default_lambda(l - 1, 9));
  ExitPolicy p;
  EXPECT_EQ(p.alpha, 0.95);
  EXPECT_EQ(p.lambda(3, 9), default_lambda(3, 9));
}

TEST(ExitPolicy, ValidatesAlphaAndSchedule) {
  ExitPolicy p;
  p.alpha = 1.5;
  EXPECT_THROW(p.validate(3), DataError);
  p.alpha = 0.5;
  p.lambdas = {0.9};
  EXPECT_THROW(p.validate(3), DataError);
  p.lambdas = {0.9, 1.0};
  EXPECT_THROW(p.validate(3), DataError);
  p.lambdas = {0.9, 0.85};
  EXPECT_NO_THROW(p.validate(3));
  EXPECT_EQ(p.lambda(2, 3), 0.85);
  EXPECT_THROW(p.lambda(3, 3), DataError);
}

}  // namespace
}  // namespace plg
