#include "plglue/matcher.hpp"

#include <chrono>

#include "plglue/pipeline.hpp"

namespace plg {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

MatchOutput match_features(const ModelParams& params, const FeatureSet& a, const FeatureSet& b,
                           const MatchOptions& options) {
  MatchOutput out;
  const auto start = Clock::now();
  const PreparedPair pair = prepare_pair(a, b, options.merge_radius);
  out.timings.graph_ms = ms_since(start);

  Tape<float> tape(false);
  const auto bound = bind_params(tape, params);
  BackboneOptions bo;
  bo.policy = &options.policy;

  auto t = Clock::now();
  const auto na = image_nodes(tape, bound, params.config, pair.graph_a, pair.pos_a);
  const auto nb = image_nodes(tape, bound, params.config, pair.graph_b, pair.pos_b);
  const auto backbone = run_backbone(na, nb, bound, params.config, bo);
  out.timings.backbone_ms = ms_since(t);
  out.timings.block_ms = backbone.block_ms;

  t = Clock::now();
  const auto [pts, lines] = assign(backbone.states_a, backbone.states_b, pair, bound.heads);
  out.assignment = to_result(pts, lines);
  out.timings.assignment_ms = ms_since(t);

  t = Clock::now();
  out.matches = filter_assignment(out.assignment, options.tau);
  out.matches.exit_layer = backbone.exit_layer;
  out.timings.filter_ms = ms_since(t);
  out.timings.total_ms = ms_since(start);
  return out;
}

std::vector<BenchRow> run_bench(const ModelParams& params,
                                const std::vector<std::pair<FeatureSet, FeatureSet>>& pairs,
                                const std::vector<double>& alphas, std::size_t repeat,
                                const MatchOptions& base) {
  if (pairs.empty() || repeat == 0) throw DataError("bench: need at least one pair and one repeat");
  const std::size_t layers = params.config.layers;
  std::vector<BenchRow> rows;
  for (double alpha : alphas) {
    MatchOptions opt = base;
    opt.policy.enabled = true;
    opt.policy.alpha = alpha;
    BenchRow row;
    row.alpha = alpha;
    row.exit_histogram.assign(layers, 0);
    std::vector<double> block_sum(layers, 0.0);
    std::vector<std::size_t> block_count(layers, 0);
    double exit_sum = 0.0, total_sum = 0.0;
    std::size_t runs = 0;
    for (std::size_t r = 0; r < repeat; ++r) {
      for (const auto& [a, b] : pairs) {
        const auto out = match_features(params, a, b, opt);
        ++runs;
        exit_sum += double(out.matches.exit_layer);
        total_sum += out.timings.total_ms;
        row.exit_histogram[out.matches.exit_layer - 1]++;
        for (std::size_t l = 0; l < out.timings.block_ms.size(); ++l) {
          block_sum[l] += out.timings.block_ms[l];
          block_count[l]++;
        }
      }
    }
    row.mean_exit_layer = exit_sum / double(runs);
    row.mean_total_ms = total_sum / double(runs);
    for (std::size_t l = 0; l < layers; ++l) {
      row.mean_block_ms.push_back(block_count[l] ? block_sum[l] / double(block_count[l]) : 0.0);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace plg
