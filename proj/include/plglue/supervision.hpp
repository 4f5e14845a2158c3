#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "plglue/assignment.hpp"
#include "plglue/geometry.hpp"
#include "plglue/gradcheck.hpp"
#include "plglue/pipeline.hpp"

namespace plg {

using IndexPair = std::pair<std::size_t, std::size_t>;

/// Ground truth for one feature type.
struct GtComponent {
  std::vector<IndexPair> positives;    // (index in A, index in B)
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;

  friend bool operator==(const GtComponent&, const GtComponent&) = default;
};

struct GroundTruth {
  GtComponent points;
  GtComponent lines;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct GtThresholds {
  double point = 3.0;      // positive point pairs: reprojection error below this
  double negative = 8.0;   // unmatchable: nothing closer than this
  double line = 5.0;       // positive line pairs: mean perpendicular distance below this
  double overlap = 0.5;    // and mutual overlap above this

  void validate() const;
};

/// Reprojection distance of a point pair: the larger of the errors measured
/// in B (H a vs b) and in A (H^-1 b vs a). Infinite when a point maps to
/// infinity.
double point_distance(Vec2 a, Vec2 b, const Homography& h, const Homography& h_inv);

/// Line pair geometry after mapping each segment into the other frame.
struct LinePairGeometry {
  double distance = 0.0;  // max over both frames and both directions of the
                          // mean endpoint-to-infinite-line distance
  double overlap = 0.0;   // min over both frames and both directions of the
                          // covered fraction of the target segment
};

LinePairGeometry line_geometry(const LineSegment& a, const LineSegment& b, const Homography& h,
                               const Homography& h_inv);

/// Positive pairs are mutual nearest neighbours under the distances above
/// that also meet the positive thresholds. A feature is unmatchable when no
/// feature of the other image comes within `negative` (for lines: with any
/// overlap at all).
GroundTruth gt_from_homography(const FeatureSet& a, const FeatureSet& b, const Homography& h,
                               const GtThresholds& thresholds = {});

struct SynthConfig {
  std::size_t points = 40;
  std::size_t lines = 10;
  double width = 320.0;
  double height = 240.0;
  std::size_t descriptor_dim = 16;

  double max_rotation_deg = 15.0;
  double max_translation = 20.0;  // px
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_perspective = 1e-4;  // bound on the projective row, 1/px

  double noise_sigma = 0.05;      // descriptor noise between corresponding features
  double junction_fraction = 0.3; // lines starting at an earlier line's endpoint
  double min_line_length = 20.0;
  double margin = 10.0;           // sampling margin from the image border
  std::size_t spurious_points = 5;
  std::size_t spurious_lines = 2;
  bool shuffle = true;            // permute B and randomly flip its endpoint order

  GtThresholds thresholds;
  std::uint64_t seed = 0;
  std::optional<Homography> fixed_h;

  void validate() const;
};

struct SynthPair {
  FeatureSet a;
  FeatureSet b;
  Homography h;
  GroundTruth gt;
};

/// Samples features in A, warps them into B, drops the ones leaving the
/// image, adds unrelated features to B and derives the ground truth.
SynthPair synth_pair(const SynthConfig& config);

/// Negative log-likelihood of one layer's assignment:
///   -mean log S[M] - 0.5 mean log(1 - sA[unmatched_a]) - 0.5 mean log(1 - sB[unmatched_b])
/// Empty sets contribute zero. Logs are clamped below at 1e-12.
template <class T>
Var<T> layer_loss(Var<T> scores, Var<T> match_a, Var<T> match_b, const GtComponent& gt);

inline constexpr double kLogFloor = 1e-12;

/// sum_l (point_l + line_l) / (2L). Throws DataError unless both lists hold
/// exactly L entries.
template <class T>
Var<T> total_loss(const std::vector<Var<T>>& point_losses, const std::vector<Var<T>>& line_losses,
                  std::size_t layers);

double total_loss(const std::vector<double>& point_losses, const std::vector<double>& line_losses,
                  std::size_t layers);

struct LossBreakdown {
  std::vector<double> point;  // per layer
  std::vector<double> line;
  double total = 0.0;
};

/// Full forward pass with every block supervised.
template <class T>
Var<T> compute_loss(Tape<T>& tape, const ParamTree<Var<T>>& params, const ModelConfig& config,
                    const PreparedPair& pair, const GroundTruth& gt,
                    LossBreakdown* breakdown = nullptr);

/// Central-difference check of the total loss gradient with respect to every
/// parameter, evaluated in double precision.
GradCheckReport loss_grad_check(const ModelParams& params, const PreparedPair& pair,
                                const GroundTruth& gt, double step = 1e-5);

struct TrainingPair {
  PreparedPair pair;
  GroundTruth gt;
};

struct TrainResult {
  std::vector<double> losses;  // loss before each update
  double final_loss = 0.0;     // loss after the last update
};

/// Plain gradient descent on total_loss, cycling through the pairs. Throws
/// NumericError naming the step when the loss stops being finite.
TrainResult train_tiny(ModelParams& params, const std::vector<TrainingPair>& pairs,
                       std::size_t steps, double learning_rate,
                       const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace plg
