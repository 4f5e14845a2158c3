#include "plglue/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include <Eigen/Dense>

namespace plg {
namespace {

template <class Match>
PRCurve pr_curve(const std::vector<Match>& ranked, const std::vector<IndexPair>& positives) {
  for (std::size_t k = 1; k < ranked.size(); ++k) {
    if (ranked[k].score > ranked[k - 1].score) {
      throw DataError("precision_recall_ap: predictions not sorted by descending score at rank " +
                      std::to_string(k));
    }
  }
  const std::set<IndexPair> gt(positives.begin(), positives.end());
  PRCurve c;
  c.positives = gt.size();
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (gt.count({ranked[k].i, ranked[k].j})) ++tp;
    c.precision.push_back(double(tp) / double(k + 1));
    c.recall.push_back(c.positives ? double(tp) / double(c.positives) : 0.0);
  }
  c.true_positives = tp;
  if (c.positives == 0) return c;

  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = c.precision.empty() ? 0.0 : c.precision.front();
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    area += (c.recall[k] - prev_r) * 0.5 * (c.precision[k] + prev_p);
    prev_r = c.recall[k];
    prev_p = c.precision[k];
  }
  c.ap = area;
  return c;
}

// Similarity moving the centroid to the origin and the mean distance to sqrt(2).
Eigen::Matrix3d conditioner(const std::vector<Vec2>& pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= double(pts.size());
  cy /= double(pts.size());
  double spread = 0.0;
  for (const auto& p : pts) spread += std::hypot(p.x - cx, p.y - cy);
  spread /= double(pts.size());
  if (!(spread > 0.0)) throw NumericError("dlt_homography: all points coincide");
  const double s = std::sqrt(2.0) / spread;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  return t;
}

}  // namespace

PRCurve precision_recall_ap(const std::vector<ScoredMatch>& ranked,
                            const std::vector<IndexPair>& positives) {
  return pr_curve(ranked, positives);
}

PRCurve precision_recall_ap(const std::vector<LineMatch>& ranked,
                            const std::vector<IndexPair>& positives) {
  return pr_curve(ranked, positives);
}

Homography dlt_homography(const std::vector<Correspondence>& pairs) {
  if (pairs.size() < 4) throw DataError("dlt_homography: at least 4 correspondences required");
  std::vector<Vec2> src, dst;
  for (const auto& [a, b] : pairs) {
    if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
      throw DataError("dlt_homography: non-finite correspondence");
    }
    src.push_back(a);
    dst.push_back(b);
  }
  const Eigen::Matrix3d ts = conditioner(src), td = conditioner(dst);

  Eigen::MatrixXd a(2 * pairs.size(), 9);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Eigen::Vector3d p = ts * Eigen::Vector3d(src[k].x, src[k].y, 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(dst[k].x, dst[k].y, 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * k) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    a.row(2 * k + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A unique solution needs rank 8: the eighth singular value must be clear
  // of zero relative to the largest.
  if (!(sv(7) > 1e-10 * sv(0))) {
    throw NumericError("dlt_homography: degenerate configuration (rank-deficient system)");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d m = td.inverse() * hn * ts;
  if (!m.allFinite() || m(2, 2) == 0.0) {
    throw NumericError("dlt_homography: solution maps the origin to infinity");
  }
  Homography out(m);
  if (!out.invertible()) throw NumericError("dlt_homography: solution is singular");
  return out;
}

double transfer_error(const Homography& h, const Homography& h_inv, const Correspondence& c) {
  const double e = std::max(distance(h.apply(c.first), c.second),
                            distance(h_inv.apply(c.second), c.first));
  return std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
}

RansacResult ransac_homography(const std::vector<Correspondence>& pairs,
                               const RansacOptions& options) {
  if (pairs.size() < 4) throw DataError("ransac_homography: at least 4 matches required");
  if (!(options.threshold > 0.0)) throw DataError("ransac_homography: threshold must be > 0");
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> index(pairs.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;

  auto inliers_of = [&](const Homography& h) {
    std::vector<std::size_t> in;
    if (!h.invertible()) return in;
    const Homography h_inv = h.inverse();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (transfer_error(h, h_inv, pairs[i]) < options.threshold) in.push_back(i);
    }
    return in;
  };

  std::vector<std::size_t> best;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    // Partial Fisher-Yates: the first four entries become the sample.
    for (std::size_t k = 0; k < 4; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, index.size() - 1);
      std::swap(index[k], index[pick(rng)]);
    }
    std::vector<Correspondence> sample;
    for (std::size_t k = 0; k < 4; ++k) sample.push_back(pairs[index[k]]);
    Homography h;
    try {
      h = dlt_homography(sample);
    } catch (const NumericError&) {
      continue;
    }
    auto in = inliers_of(h);
    if (in.size() > best.size()) best = std::move(in);
  }
  if (best.size() < 4) throw NumericError("ransac_homography: no hypothesis with 4 inliers");

  std::vector<Correspondence> support;
  for (auto i : best) support.push_back(pairs[i]);
  return {dlt_homography(support), best};
}

double corner_error(const Homography& estimate, const Homography& truth, double width,
                    double height) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (!estimate.invertible()) return inf;
  double total = 0.0;
  for (const auto& c : image_corners(width, height)) {
    const double d = distance(estimate.apply(c), truth.apply(c));
    if (!std::isfinite(d)) return inf;
    total += d;
  }
  return total / 4.0;
}

std::vector<double> corner_auc(const std::vector<double>& errors,
                               const std::vector<double>& thresholds) {
  std::vector<double> out;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw DataError("corner_auc: thresholds must be > 0");
    if (errors.empty()) {
      out.push_back(0.0);
      continue;
    }
    double acc = 0.0;
    for (double e : errors) {
      if (std::isnan(e)) throw DataError("corner_auc: NaN error");
      acc += std::max(0.0, 1.0 - e / t);
    }
    out.push_back(acc / double(errors.size()));
  }
  return out;
}

}  // namespace plg
