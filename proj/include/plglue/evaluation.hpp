#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "plglue/assignment.hpp"
#include "plglue/geometry.hpp"
#include "plglue/supervision.hpp"

namespace plg {

/// Precision and recall after each ranked prediction.
struct PRCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t positives = 0;     // |M|
  std::size_t true_positives = 0;
  // Trapezoidal area under precision(recall), starting from recall 0 at the
  // first prediction's precision. Empty when there are no positives.
  std::optional<double> ap;
};

/// `ranked` must be sorted by descending score; DataError otherwise.
PRCurve precision_recall_ap(const std::vector<ScoredMatch>& ranked,
                            const std::vector<IndexPair>& positives);
PRCurve precision_recall_ap(const std::vector<LineMatch>& ranked,
                            const std::vector<IndexPair>& positives);

using Correspondence = std::pair<Vec2, Vec2>;  // (position in A, position in B)

/// Normalised direct linear transform over >= 4 correspondences. Throws
/// NumericError for rank-deficient configurations.
Homography dlt_homography(const std::vector<Correspondence>& pairs);

struct RansacOptions {
  double threshold = 3.0;  // symmetric transfer error, px
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography h;
  std::vector<std::size_t> inliers;  // ascending indices into the input
};

/// Symmetric transfer error: the larger of |H a - b| and |H^-1 b - a|.
double transfer_error(const Homography& h, const Homography& h_inv, const Correspondence& c);

/// Seeded 4-point RANSAC followed by a DLT refit on the best inlier set.
RansacResult ransac_homography(const std::vector<Correspondence>& pairs,
                               const RansacOptions& options = {});

/// Mean distance between the four image corners mapped by both homographies.
/// Infinite when `estimate` is singular or maps a corner to infinity.
double corner_error(const Homography& estimate, const Homography& truth, double width,
                    double height);

/// Area under the cumulative error curve up to each threshold, divided by the
/// threshold, i.e. mean over pairs of max(0, 1 - e / t).
std::vector<double> corner_auc(const std::vector<double>& errors,
                               const std::vector<double>& thresholds = {1.0, 3.0, 5.0});

}  // namespace plg
