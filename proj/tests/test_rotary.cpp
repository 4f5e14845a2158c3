#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "plglue/ops.hpp"
#include "plglue/rotary.hpp"
#include "test_util.hpp"

namespace plg {
namespace {

using testing::random_tensor;

std::vector<double> angles_between(std::span<const double> pos, const TensorD& bases) {
  std::vector<double> out;
  for (std::size_t k = 0; k < bases.dim(0); ++k)
    out.push_back(bases(k, 0) * pos[0] + bases(k, 1) * pos[1]);
  return out;
}

TEST(Rotary, OriginGivesZeroAngles) {
  auto basis = RotaryBasis::random(8, 1);
  auto a = compute_angles(Tensor({1, 2}, {0.0f, 0.0f}), basis.bases());
  for (float v : a.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Rotary, SingleBasisDotProduct) {
  auto a = compute_angles(Tensor({1, 2}, {0.5f, 0.7f}), Tensor({1, 2}, {1.0f, 0.0f}));
  EXPECT_FLOAT_EQ(a(0, 0), 0.5f);
}

TEST(Rotary, AnglesMatchDoubleDotProducts) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto pos = random_tensor<float>({17, 2}, rng);
    auto bases = RotaryBasis::random(16, trial).bases();
    auto a = compute_angles(pos, bases);
    for (std::size_t i = 0; i < 17; ++i)
      for (std::size_t k = 0; k < 8; ++k) {
        const double ref = double(bases(k, 0)) * pos(i, 0) + double(bases(k, 1)) * pos(i, 1);
        EXPECT_NEAR(a(i, k), ref, 1e-6);
      }
  }
}

TEST(Rotary, TapeAnglesEqualDirectAngles) {
  std::mt19937_64 rng(4);
  auto pos = random_tensor<double>({5, 2}, rng);
  auto bases = random_tensor<double>({3, 2}, rng);
  Tape<double> tape(false);
  auto v = compute_angles(tape.constant(pos), tape.constant(bases)).value();
  auto d = compute_angles(pos, bases);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], d[i], 1e-15);
}

TEST(Rotary, ZeroAnglesAreIdentity) {
  std::vector<float> v = {1.5f, -2.0f, 0.25f, 4.0f};
  std::vector<float> zero(2, 0.0f);
  EXPECT_EQ(apply_rotation<float>(v, zero), v);
}

TEST(Rotary, QuarterTurn) {
  std::vector<double> v = {1.0, 0.0};
  std::vector<double> th = {std::numbers::pi / 2};
  auto r = apply_rotation<double>(v, th);
  EXPECT_NEAR(r[0], 0.0, 1e-6);
  EXPECT_NEAR(r[1], 1.0, 1e-6);
}

TEST(Rotary, PreservesNorm) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = testing::to_vec(random_tensor<float>({8}, rng, -3, 3));
    auto th = testing::to_vec(random_tensor<float>({4}, rng, -10, 10));
    auto r = apply_rotation<double>(v, th);
    double n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      n0 += v[i] * v[i];
      n1 += r[i] * r[i];
    }
    EXPECT_NEAR(std::sqrt(n0), std::sqrt(n1), 1e-6);
  }
}

TEST(Rotary, CompositionAddsAngles) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = testing::to_vec(random_tensor<double>({6}, rng));
    auto a = testing::to_vec(random_tensor<double>({3}, rng, -4, 4));
    auto b = testing::to_vec(random_tensor<double>({3}, rng, -4, 4));
    std::vector<double> ab(3);
    for (int k = 0; k < 3; ++k) ab[k] = a[k] + b[k];
    auto lhs = apply_rotation<double>(apply_rotation<double>(v, a), b);
    auto rhs = apply_rotation<double>(v, ab);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-5);
  }
}

TEST(Rotary, AbsoluteFormEqualsRelativeForm) {
  std::mt19937_64 rng(8);
  auto bases = RotaryBasis::random(8, 8).bases().cast<double>();
  for (int trial = 0; trial < 200; ++trial) {
    auto q = testing::to_vec(random_tensor<double>({8}, rng));
    auto k = testing::to_vec(random_tensor<double>({8}, rng));
    auto pi = testing::to_vec(random_tensor<double>({2}, rng));
    auto pj = testing::to_vec(random_tensor<double>({2}, rng));
    std::vector<double> d = {pj[0] - pi[0], pj[1] - pi[1]};
    const double lhs = testing::dot(apply_rotation<double>(q, angles_between(pi, bases)),
                                    apply_rotation<double>(k, angles_between(pj, bases)));
    const double rhs = testing::dot(q, apply_rotation<double>(k, angles_between(d, bases)));
    EXPECT_NEAR(lhs, rhs, 1e-5);
  }
}

TEST(Rotary, TapeRotaryMatchesApplyRotationPerHead) {
  std::mt19937_64 rng(10);
  Tape<double> tape(false);
  auto x = random_tensor<double>({3, 8}, rng);
  auto ang = random_tensor<double>({3, 2}, rng, -3, 3);
  auto y = ops::rotary(tape.constant(x), tape.constant(ang)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> th = {ang(r, 0), ang(r, 1)};
    for (std::size_t h = 0; h < 2; ++h) {
      std::vector<double> v(x.data().begin() + r * 8 + h * 4, x.data().begin() + r * 8 + h * 4 + 4);
      auto ref = apply_rotation<double>(v, th);
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y(r, h * 4 + c), ref[c], 1e-15);
    }
  }
}

TEST(Rotary, RejectsOddDimensionsAndLengthMismatch) {
  EXPECT_THROW(RotaryBasis::random(7, 0), ShapeError);
  EXPECT_THROW(RotaryBasis(Tensor({3, 3})), ShapeError);
  std::vector<float> v(4), th(3);
  EXPECT_THROW(apply_rotation<float>(v, th), ShapeError);
}

TEST(Rotary, RandomBasisIsSeededAndBounded) {
  auto a = RotaryBasis::random(16, 42), b = RotaryBasis::random(16, 42);
  EXPECT_TRUE(bit_equal(a.bases(), b.bases()));
  EXPECT_EQ(a.head_dim(), 16u);
  for (float v : a.bases().data()) {
    EXPECT_GE(v, -std::numbers::pi_v<float>);
    EXPECT_LE(v, std::numbers::pi_v<float>);
  }
}

}  // namespace
}  // namespace plg
