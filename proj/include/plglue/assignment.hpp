#pragma once

#include <cstdint>
#include <vector>

#include "plglue/model.hpp"
#include "plglue/wireframe.hpp"

namespace plg {

inline constexpr double kDefaultMatchThreshold = 0.1;

/// Dual-softmax assignment for one feature type.
template <class T>
struct AssignmentVars {
  Var<T> scores;   // S, [N_A, N_B]
  Var<T> sim;      // raw similarity s, [N_A, N_B]
  Var<T> match_a;  // matchability sigma, [N_A, 1]
  Var<T> match_b;  // [N_B, 1]
};

template <class T>
struct LineAssignmentVars : AssignmentVars<T> {
  // 1 where the swapped endpoint pairing attained the max, row-major [N_A * N_B].
  std::vector<std::uint8_t> swapped;
};

/// S_ij = sigma_i^A sigma_j^B softmax_j(s_ij) softmax_i(s_ij)
template <class T>
Var<T> dual_softmax_scores(Var<T> sim, Var<T> match_a, Var<T> match_b);

/// Point similarity and matchability on the given (keypoint) node rows.
template <class T>
AssignmentVars<T> point_assignment(Var<T> states_a, Var<T> states_b,
                                   const std::vector<std::size_t>& nodes_a,
                                   const std::vector<std::size_t>& nodes_b,
                                   const HeadsT<Var<T>>& heads);

/// Order-agnostic line similarity: the better of the straight and swapped
/// endpoint pairings; line matchability is the mean of endpoint matchabilities.
template <class T>
LineAssignmentVars<T> line_assignment(Var<T> states_a, Var<T> states_b,
                                      const std::vector<LineEdge>& lines_a,
                                      const std::vector<LineEdge>& lines_b,
                                      const HeadsT<Var<T>>& heads);

/// Value snapshot of both assignments.
struct AssignmentResult {
  Tensor point_scores;
  Tensor point_match_a, point_match_b;
  Tensor line_scores;
  Tensor line_match_a, line_match_b;
  std::vector<std::uint8_t> line_swapped;
};

template <class T>
AssignmentResult to_result(const AssignmentVars<T>& points, const LineAssignmentVars<T>& lines);

struct ScoredMatch {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;

  friend bool operator==(const ScoredMatch&, const ScoredMatch&) = default;
};

struct LineMatch {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;
  bool swapped = false;  // endpoint a of line i corresponds to endpoint b of line j

  friend bool operator==(const LineMatch&, const LineMatch&) = default;
};

struct MatchSet {
  std::vector<ScoredMatch> points;
  std::vector<LineMatch> lines;
  std::size_t exit_layer = 0;

  friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

/// Keeps (i, j) when S_ij > tau and S_ij strictly exceeds every other entry
/// of row i and column j. Sorted by descending score, then (i, j).
template <class T>
std::vector<ScoredMatch> filter_matches(const BasicTensor<T>& scores, double tau);

MatchSet filter_assignment(const AssignmentResult& result, double tau);

}  // namespace plg
