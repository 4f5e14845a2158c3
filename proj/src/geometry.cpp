#include "plglue/geometry.hpp"

#include <cmath>

#include <Eigen/LU>

#include "plglue/tensor.hpp"

namespace plg {
namespace {

Eigen::Matrix3d normalized(const Eigen::Matrix3d& m) {
  const double s = m(2, 2);
  return s != 0.0 ? Eigen::Matrix3d(m / s) : m;
}

}  // namespace

Homography::Homography(const Eigen::Matrix3d& m) : m_(normalized(m)) {
  if (!m_.allFinite()) throw NumericError("homography: non-finite entries");
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Vec2 Homography::apply(Vec2 p) const {
  const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x, p.y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

bool Homography::invertible() const {
  const double det = m_.determinant();
  return std::isfinite(det) && std::abs(det) > 1e-12 * std::pow(m_.norm(), 3);
}

Homography Homography::inverse() const {
  if (!invertible()) throw NumericError("homography: matrix is singular");
  return Homography(Eigen::Matrix3d(m_.inverse()));
}

Homography Homography::compose(const Homography& other) const {
  return Homography(Eigen::Matrix3d(m_ * other.m_));
}

std::array<Vec2, 4> image_corners(double width, double height) {
  return {Vec2{0.0, 0.0}, Vec2{width, 0.0}, Vec2{width, height}, Vec2{0.0, height}};
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace plg
