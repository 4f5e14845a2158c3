#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>

#include "plglue/wireframe.hpp"

namespace plg {

/// Planar projective map. Stored normalised so that h(2,2) == 1 whenever
/// that entry is nonzero.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  /// Maps a point. The result is non-finite when it lands at infinity.
  Vec2 apply(Vec2 p) const;

  bool invertible() const;
  /// Throws NumericError when singular.
  Homography inverse() const;

  /// this * other: apply `other` first.
  Homography compose(const Homography& other) const;

  friend bool operator==(const Homography& a, const Homography& b) { return a.m_ == b.m_; }

 private:
  Eigen::Matrix3d m_;
};

/// Image corners (0,0), (w,0), (w,h), (0,h).
std::array<Vec2, 4> image_corners(double width, double height);

double distance(Vec2 a, Vec2 b);

}  // namespace plg
