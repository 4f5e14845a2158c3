#pragma once

#include <cstddef>
#include <vector>

#include "plglue/tensor.hpp"

namespace plg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Keypoint {
  Vec2 pos;
  std::vector<float> desc;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct LineSegment {
  Vec2 a;
  Vec2 b;
  std::vector<float> desc_a;
  std::vector<float> desc_b;

  friend bool operator==(const LineSegment&, const LineSegment&) = default;
};

/// Detected features of one image. Descriptors arrive precomputed.
struct FeatureSet {
  double width = 0.0;
  double height = 0.0;
  std::vector<Keypoint> keypoints;
  std::vector<LineSegment> lines;

  /// Dimension shared by all descriptors, 0 when there are none.
  std::size_t descriptor_dim() const;

  /// Full invariant check: finite positions inside the image and a single
  /// descriptor dimension. Throws DataError naming the offending field.
  void validate() const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

enum class NodeKind { kKeypoint, kEndpoint };

struct GraphNode {
  Vec2 pos;
  std::vector<float> embedding;
  NodeKind kind = NodeKind::kKeypoint;
};

struct LineEdge {
  std::size_t a = 0;  // node holding the line's first endpoint
  std::size_t b = 0;  // node holding the line's second endpoint
  std::size_t line_id = 0;
};

/// Node graph of one image. Keypoint nodes come first and keep the input
/// keypoint order; endpoint nodes follow in order of first appearance.
/// edges[i] always describes input line i.
struct WireframeGraph {
  std::vector<GraphNode> nodes;
  std::vector<LineEdge> edges;
  std::vector<std::vector<std::size_t>> adjacency;  // sorted neighbor sets
  std::size_t num_keypoints = 0;
  std::size_t descriptor_dim = 0;

  std::size_t size() const { return nodes.size(); }
  std::vector<std::size_t> keypoint_nodes() const;
  std::vector<std::size_t> endpoint_nodes() const;

  /// Initial embeddings as an [N, dim] tensor. Empty graphs yield [0, dim].
  Tensor embeddings(std::size_t dim) const;
};

inline constexpr double kDefaultMergeRadius = 3.0;

/// Merges line endpoints closer than or equal to merge_radius into junction
/// nodes (mean position, mean descriptor) and links the two endpoints of
/// every line. Merging repeats until all endpoint nodes are further apart
/// than the radius.
WireframeGraph build_wireframe(const FeatureSet& features,
                               double merge_radius = kDefaultMergeRadius);

/// Maps pixel positions to [-1, 1]^2: centre of the image to the origin,
/// half the larger side to unit length.
Vec2 normalize_position(Vec2 p, double width, double height);

/// Normalised node positions as an [N, 2] tensor.
template <class T = float>
BasicTensor<T> normalize_positions(const WireframeGraph& graph, double width, double height);

}  // namespace plg
