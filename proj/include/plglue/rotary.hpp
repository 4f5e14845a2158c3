#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "plglue/tape.hpp"

namespace plg {

/// Learned 2D frequency vectors of the rotary encoding: K/2 rows of (bx, by),
/// stored as a [K/2, 2] tensor.
class RotaryBasis {
 public:
  RotaryBasis() = default;
  explicit RotaryBasis(Tensor bases);

  /// Entries uniform in [-pi, pi].
  static RotaryBasis random(std::size_t head_dim, std::uint64_t seed);

  std::size_t head_dim() const { return 2 * bases_.dim(0); }
  std::size_t pairs() const { return bases_.dim(0); }
  const Tensor& bases() const { return bases_; }

 private:
  Tensor bases_;
};

/// theta(i, k) = b_k . p_i for positions [N, 2]; result is [N, K/2].
template <class T>
BasicTensor<T> compute_angles(const BasicTensor<T>& positions, const BasicTensor<T>& bases);

/// Same, recorded on the tape so gradients reach the basis.
template <class T>
Var<T> compute_angles(Var<T> positions, Var<T> bases);

/// Rotates each consecutive pair (v[2k], v[2k+1]) by angles[k].
template <class T>
std::vector<T> apply_rotation(std::span<const T> v, std::span<const T> angles);

}  // namespace plg
