#pragma once

#include <vector>

#include "plglue/adaptivity.hpp"
#include "plglue/assignment.hpp"
#include "plglue/model.hpp"
#include "plglue/wireframe.hpp"

namespace plg {

struct MatchOptions {
  double tau = kDefaultMatchThreshold;
  double merge_radius = kDefaultMergeRadius;
  ExitPolicy policy;  // set policy.enabled = false to always run every block
};

/// Wall-clock milliseconds from a monotonic clock.
struct MatchTimings {
  double graph_ms = 0.0;
  double backbone_ms = 0.0;
  double assignment_ms = 0.0;
  double filter_ms = 0.0;
  double total_ms = 0.0;
  std::vector<double> block_ms;  // one entry per executed block
};

struct MatchOutput {
  MatchSet matches;
  AssignmentResult assignment;
  MatchTimings timings;
};

/// Full inference pipeline for one image pair in single precision.
MatchOutput match_features(const ModelParams& params, const FeatureSet& a, const FeatureSet& b,
                           const MatchOptions& options = {});

struct BenchRow {
  double alpha = 0.0;
  double mean_exit_layer = 0.0;
  std::vector<std::size_t> exit_histogram;  // index l-1 counts exits after block l
  std::vector<double> mean_block_ms;        // averaged over runs that reached the block
  double mean_total_ms = 0.0;
};

/// Runs the pipeline `repeat` times per alpha on every pair.
std::vector<BenchRow> run_bench(const ModelParams& params,
                                const std::vector<std::pair<FeatureSet, FeatureSet>>& pairs,
                                const std::vector<double>& alphas, std::size_t repeat,
                                const MatchOptions& base = {});

inline const std::vector<double> kBenchAlphas = {0.0, 0.25, 0.5, 0.75, 0.95, 1.0};

}  // namespace plg
