#pragma once

#include "plglue/assignment.hpp"
#include "plglue/backbone.hpp"
#include "plglue/wireframe.hpp"

namespace plg {

/// Everything derived from a feature pair before the network runs.
struct PreparedPair {
  WireframeGraph graph_a;
  WireframeGraph graph_b;
  TensorD pos_a;  // normalised node positions [N_A, 2]
  TensorD pos_b;
};

PreparedPair prepare_pair(const FeatureSet& a, const FeatureSet& b,
                          double merge_radius = kDefaultMergeRadius);

/// Embeddings as constants and rotary angles from the learned basis.
template <class T>
ImageNodes<T> image_nodes(Tape<T>& tape, const ParamTree<Var<T>>& params,
                          const ModelConfig& config, const WireframeGraph& graph,
                          const TensorD& positions);

template <class T>
struct ForwardResult {
  BackboneOutput<T> backbone;
  AssignmentVars<T> points;
  LineAssignmentVars<T> lines;
};

/// Node embeddings, rotary angles, backbone and both assignment heads on the
/// final states.
template <class T>
ForwardResult<T> forward_pair(Tape<T>& tape, const ParamTree<Var<T>>& params,
                              const ModelConfig& config, const PreparedPair& pair,
                              const BackboneOptions& options = {});

/// Point and line assignment of one pair of node states.
template <class T>
std::pair<AssignmentVars<T>, LineAssignmentVars<T>> assign(Var<T> states_a, Var<T> states_b,
                                                           const PreparedPair& pair,
                                                           const HeadsT<Var<T>>& heads);

}  // namespace plg
