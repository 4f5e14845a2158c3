#include "plglue/pipeline.hpp"

#include "plglue/rotary.hpp"

namespace plg {

PreparedPair prepare_pair(const FeatureSet& a, const FeatureSet& b, double merge_radius) {
  a.validate();
  b.validate();
  PreparedPair p;
  p.graph_a = build_wireframe(a, merge_radius);
  p.graph_b = build_wireframe(b, merge_radius);
  p.pos_a = normalize_positions<double>(p.graph_a, a.width, a.height);
  p.pos_b = normalize_positions<double>(p.graph_b, b.width, b.height);
  return p;
}

template <class T>
std::pair<AssignmentVars<T>, LineAssignmentVars<T>> assign(Var<T> states_a, Var<T> states_b,
                                                           const PreparedPair& pair,
                                                           const HeadsT<Var<T>>& heads) {
  return {point_assignment(states_a, states_b, pair.graph_a.keypoint_nodes(),
                           pair.graph_b.keypoint_nodes(), heads),
          line_assignment(states_a, states_b, pair.graph_a.edges, pair.graph_b.edges, heads)};
}

template <class T>
ImageNodes<T> image_nodes(Tape<T>& tape, const ParamTree<Var<T>>& params,
                          const ModelConfig& config, const WireframeGraph& graph,
                          const TensorD& positions) {
  ImageNodes<T> n;
  n.states = tape.constant(graph.embeddings(config.dim).template cast<T>());
  n.angles = compute_angles(tape.constant(positions.template cast<T>()), params.rotary);
  n.graph = &graph;
  return n;
}

template <class T>
ForwardResult<T> forward_pair(Tape<T>& tape, const ParamTree<Var<T>>& params,
                              const ModelConfig& config, const PreparedPair& pair,
                              const BackboneOptions& options) {
  const auto a = image_nodes(tape, params, config, pair.graph_a, pair.pos_a);
  const auto b = image_nodes(tape, params, config, pair.graph_b, pair.pos_b);

  ForwardResult<T> out;
  out.backbone = run_backbone(a, b, params, config, options);
  std::tie(out.points, out.lines) =
      assign(out.backbone.states_a, out.backbone.states_b, pair, params.heads);
  return out;
}

template ImageNodes<float> image_nodes(Tape<float>&, const ParamTree<Var<float>>&,
                                       const ModelConfig&, const WireframeGraph&, const TensorD&);
template ImageNodes<double> image_nodes(Tape<double>&, const ParamTree<Var<double>>&,
                                        const ModelConfig&, const WireframeGraph&,
                                        const TensorD&);
template ForwardResult<float> forward_pair(Tape<float>&, const ParamTree<Var<float>>&,
                                           const ModelConfig&, const PreparedPair&,
                                           const BackboneOptions&);
template ForwardResult<double> forward_pair(Tape<double>&, const ParamTree<Var<double>>&,
                                            const ModelConfig&, const PreparedPair&,
                                            const BackboneOptions&);
template std::pair<AssignmentVars<float>, LineAssignmentVars<float>> assign(
    Var<float>, Var<float>, const PreparedPair&, const HeadsT<Var<float>>&);
template std::pair<AssignmentVars<double>, LineAssignmentVars<double>> assign(
    Var<double>, Var<double>, const PreparedPair&, const HeadsT<Var<double>>&);

}  // namespace plg
