#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "plglue/adaptivity.hpp"
#include "plglue/model.hpp"
#include "plglue/wireframe.hpp"

namespace plg {

/// Pre-softmax attention scores, one matrix per head, kept for inspection.
template <class T>
struct ScoreTrace {
  std::vector<BasicTensor<T>> self_a, self_b;  // [block * heads + h]
  std::vector<BasicTensor<T>> almp_a, almp_b;
  std::vector<BasicTensor<T>> cross;
};

struct BackboneOptions {
  bool supervise = false;  // keep the states after every block
  const ExitPolicy* policy = nullptr;
  bool record_scores = false;
};

/// Per-image input: initial states [N, D], rotary angles [N, K/2] and the graph.
template <class T>
struct ImageNodes {
  Var<T> states;
  Var<T> angles;
  const WireframeGraph* graph = nullptr;
};

template <class T>
struct BackboneOutput {
  Var<T> states_a;
  Var<T> states_b;
  std::vector<std::pair<Var<T>, Var<T>>> snapshots;
  std::size_t exit_layer = 0;
  std::vector<double> block_ms;
  ScoreTrace<T> scores;
};

/// layer-normalize -> linear -> gelu -> linear
template <class T>
Var<T> apply_mlp(Var<T> x, const MlpT<Var<T>>& mlp);

/// x + MLP([x | m])
template <class T>
Var<T> residual_update(Var<T> x, Var<T> m, const MlpT<Var<T>>& mlp);

/// Rotary multi-head self-attention over all nodes of one image, followed
/// by the residual update.
template <class T>
Var<T> self_attention_layer(Var<T> states, Var<T> angles, const SelfAttentionT<Var<T>>& p,
                            std::size_t heads, std::vector<BasicTensor<T>>* scores = nullptr);

/// Bidirectional cross-attention sharing one key-key score matrix.
template <class T>
std::pair<Var<T>, Var<T>> cross_attention_layer(Var<T> states_a, Var<T> states_b,
                                                const CrossAttentionT<Var<T>>& p,
                                                std::size_t heads,
                                                std::vector<BasicTensor<T>>* scores = nullptr);

/// Attentional line message passing: each endpoint node attends to itself and
/// its line neighbors. Keypoint rows are copied through unchanged.
template <class T>
Var<T> almp_layer(Var<T> states, const WireframeGraph& graph, Var<T> angles,
                  const SelfAttentionT<Var<T>>& p, std::size_t heads,
                  std::vector<BasicTensor<T>>* scores = nullptr);

/// Runs blocks of self -> line message passing -> cross until the last block
/// or until the exit policy fires.
template <class T>
BackboneOutput<T> run_backbone(const ImageNodes<T>& a, const ImageNodes<T>& b,
                               const ParamTree<Var<T>>& params, const ModelConfig& config,
                               const BackboneOptions& options = {});

}  // namespace plg
