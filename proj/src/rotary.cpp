#include "plglue/rotary.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "plglue/ops.hpp"

namespace plg {

RotaryBasis::RotaryBasis(Tensor bases) : bases_(std::move(bases)) {
  if (bases_.rank() != 2 || bases_.dim(1) != 2 || bases_.dim(0) == 0) {
    throw ShapeError("rotary: basis must be [K/2, 2] with K > 0, got " + shape_str(bases_.shape()));
  }
  if (!bases_.all_finite()) throw NumericError("rotary: non-finite basis");
}

RotaryBasis RotaryBasis::random(std::size_t head_dim, std::uint64_t seed) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ShapeError("rotary: head dimension must be even and positive, got " +
                     std::to_string(head_dim));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-std::numbers::pi_v<float>, std::numbers::pi_v<float>);
  Tensor b({head_dim / 2, 2});
  for (auto& v : b.data()) v = u(rng);
  return RotaryBasis(std::move(b));
}

template <class T>
BasicTensor<T> compute_angles(const BasicTensor<T>& positions, const BasicTensor<T>& bases) {
  if (positions.rank() != 2 || positions.dim(1) != 2) {
    throw ShapeError("compute_angles: positions must be [N, 2], got " +
                     shape_str(positions.shape()));
  }
  if (bases.rank() != 2 || bases.dim(1) != 2) {
    throw ShapeError("compute_angles: bases must be [K/2, 2], got " + shape_str(bases.shape()));
  }
  const std::size_t n = positions.dim(0), p = bases.dim(0);
  BasicTensor<T> out({n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < p; ++k)
      out(i, k) = bases(k, 0) * positions(i, 0) + bases(k, 1) * positions(i, 1);
  return out;
}

template <class T>
Var<T> compute_angles(Var<T> positions, Var<T> bases) {
  return ops::matmul_nt(positions, bases);
}

template <class T>
std::vector<T> apply_rotation(std::span<const T> v, std::span<const T> angles) {
  if (v.size() != 2 * angles.size()) {
    throw ShapeError("apply_rotation: vector of length " + std::to_string(v.size()) +
                     " needs " + std::to_string(v.size() / 2) + " angles, got " +
                     std::to_string(angles.size()));
  }
  std::vector<T> out(v.size());
  for (std::size_t k = 0; k < angles.size(); ++k) {
    const T c = std::cos(angles[k]), s = std::sin(angles[k]);
    out[2 * k] = c * v[2 * k] - s * v[2 * k + 1];
    out[2 * k + 1] = s * v[2 * k] + c * v[2 * k + 1];
  }
  return out;
}

template Tensor compute_angles(const Tensor&, const Tensor&);
template TensorD compute_angles(const TensorD&, const TensorD&);
template Var<float> compute_angles(Var<float>, Var<float>);
template Var<double> compute_angles(Var<double>, Var<double>);
template std::vector<float> apply_rotation(std::span<const float>, std::span<const float>);
template std::vector<double> apply_rotation(std::span<const double>, std::span<const double>);

}  // namespace plg
