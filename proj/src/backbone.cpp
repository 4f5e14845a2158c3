#include "plglue/backbone.hpp"

#include <chrono>
#include <cmath>

#include "plglue/ops.hpp"

namespace plg {
namespace {

template <class T>
Var<T> project(Var<T> x, const LinearT<Var<T>>& l) {
  return ops::linear(x, l.weight, l.bias);
}

// Multi-head attention of q over (k, v). Rows of the score matrix are
// normalised, restricted to `mask` when given. Returns concatenated heads.
template <class T>
Var<T> attend(Var<T> q, Var<T> k, Var<T> v, std::size_t heads,
              const std::vector<std::uint8_t>* mask, std::vector<BasicTensor<T>>* scores) {
  const std::size_t head_dim = q.dim(1) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Var<T>> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * head_dim;
    auto s = ops::affine(ops::matmul_nt(ops::slice_cols(q, c0, head_dim),
                                        ops::slice_cols(k, c0, head_dim)),
                         scale, T(0));
    if (scores) scores->push_back(s.value());
    auto p = mask ? ops::masked_softmax(s, *mask) : ops::softmax(s, 1);
    out.push_back(ops::matmul(p, ops::slice_cols(v, c0, head_dim)));
  }
  return heads == 1 ? out.front() : ops::concat(out, 1);
}

}  // namespace

template <class T>
Var<T> apply_mlp(Var<T> x, const MlpT<Var<T>>& mlp) {
  auto h = ops::layer_norm(x, mlp.norm_gain, mlp.norm_bias);
  h = ops::gelu(project(h, mlp.hidden));
  return project(h, mlp.out);
}

template <class T>
Var<T> residual_update(Var<T> x, Var<T> m, const MlpT<Var<T>>& mlp) {
  if (x.shape() != m.shape()) {
    throw ShapeError("residual_update: state " + shape_str(x.shape()) + " and message " +
                     shape_str(m.shape()) + " differ");
  }
  return ops::add(x, apply_mlp(ops::concat<T>({x, m}, 1), mlp));
}

template <class T>
Var<T> self_attention_layer(Var<T> states, Var<T> angles, const SelfAttentionT<Var<T>>& p,
                            std::size_t heads, std::vector<BasicTensor<T>>* scores) {
  if (states.dim(0) == 0) return states;
  auto q = ops::rotary(project(states, p.query), angles);
  auto k = ops::rotary(project(states, p.key), angles);
  auto v = project(states, p.value);
  auto m = project(attend(q, k, v, heads, nullptr, scores), p.out);
  return residual_update(states, m, p.mlp);
}

template <class T>
std::pair<Var<T>, Var<T>> cross_attention_layer(Var<T> states_a, Var<T> states_b,
                                                const CrossAttentionT<Var<T>>& p,
                                                std::size_t heads,
                                                std::vector<BasicTensor<T>>* scores) {
  if (states_a.dim(0) == 0 || states_b.dim(0) == 0) return {states_a, states_b};
  auto ka = project(states_a, p.key), kb = project(states_b, p.key);
  auto va = project(states_a, p.value), vb = project(states_b, p.value);
  const std::size_t head_dim = ka.dim(1) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Var<T>> ma, mb;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * head_dim;
    auto s = ops::affine(ops::matmul_nt(ops::slice_cols(ka, c0, head_dim),
                                        ops::slice_cols(kb, c0, head_dim)),
                         scale, T(0));
    if (scores) scores->push_back(s.value());
    ma.push_back(ops::matmul(ops::softmax(s, 1), ops::slice_cols(vb, c0, head_dim)));
    mb.push_back(
        ops::matmul(ops::transpose(ops::softmax(s, 0)), ops::slice_cols(va, c0, head_dim)));
  }
  auto msg_a = project(heads == 1 ? ma.front() : ops::concat(ma, 1), p.out);
  auto msg_b = project(heads == 1 ? mb.front() : ops::concat(mb, 1), p.out);
  return {residual_update(states_a, msg_a, p.mlp), residual_update(states_b, msg_b, p.mlp)};
}

template <class T>
Var<T> almp_layer(Var<T> states, const WireframeGraph& graph, Var<T> angles,
                  const SelfAttentionT<Var<T>>& p, std::size_t heads,
                  std::vector<BasicTensor<T>>* scores) {
  if (states.dim(0) != graph.size()) {
    throw ShapeError("almp_layer: " + std::to_string(states.dim(0)) + " states for a graph of " +
                     std::to_string(graph.size()) + " nodes");
  }
  const auto endpoints = graph.endpoint_nodes();
  if (endpoints.empty()) return states;
  const std::size_t e = endpoints.size();
  const std::size_t first = graph.num_keypoints;

  // Neighborhood N(i) + {i} in local endpoint indices.
  std::vector<std::uint8_t> mask(e * e, 0);
  for (std::size_t i = 0; i < e; ++i) {
    mask[i * e + i] = 1;
    for (auto j : graph.adjacency[first + i]) mask[i * e + (j - first)] = 1;
  }

  auto x = ops::gather_rows(states, endpoints);
  auto ang = ops::gather_rows(angles, endpoints);
  auto q = ops::rotary(project(x, p.query), ang);
  auto k = ops::rotary(project(x, p.key), ang);
  auto v = project(x, p.value);
  auto m = project(attend(q, k, v, heads, &mask, scores), p.out);
  return ops::scatter_rows(states, endpoints, residual_update(x, m, p.mlp));
}

template <class T>
BackboneOutput<T> run_backbone(const ImageNodes<T>& a, const ImageNodes<T>& b,
                               const ParamTree<Var<T>>& params, const ModelConfig& config,
                               const BackboneOptions& options) {
  config.validate();
  if (params.blocks.size() != config.layers) {
    throw ShapeError("run_backbone: parameters hold " + std::to_string(params.blocks.size()) +
                     " blocks, config expects " + std::to_string(config.layers));
  }
  if (!a.graph || !b.graph) throw Error("run_backbone: missing graph");
  if (a.states.dim(1) != config.dim || b.states.dim(1) != config.dim) {
    throw ShapeError("run_backbone: node states must have width " + std::to_string(config.dim));
  }
  const ExitPolicy* policy = options.policy && options.policy->enabled ? options.policy : nullptr;
  if (policy) policy->validate(config.layers);

  BackboneOutput<T> out;
  auto xa = a.states, xb = b.states;
  ScoreTrace<T>* tr = options.record_scores ? &out.scores : nullptr;
  out.exit_layer = config.layers;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& blk = params.blocks[l];
    xa = self_attention_layer(xa, a.angles, blk.self, config.heads, tr ? &tr->self_a : nullptr);
    xb = self_attention_layer(xb, b.angles, blk.self, config.heads, tr ? &tr->self_b : nullptr);
    xa = almp_layer(xa, *a.graph, a.angles, blk.almp, config.heads, tr ? &tr->almp_a : nullptr);
    xb = almp_layer(xb, *b.graph, b.angles, blk.almp, config.heads, tr ? &tr->almp_b : nullptr);
    std::tie(xa, xb) =
        cross_attention_layer(xa, xb, blk.cross, config.heads, tr ? &tr->cross : nullptr);
    if (options.supervise) out.snapshots.emplace_back(xa, xb);

    bool stop = false;
    if (policy && l + 1 < config.layers) {
      auto ca = node_confidences(xa, params.confidence[l]);
      auto cb = node_confidences(xb, params.confidence[l]);
      stop = should_exit<T>(ca.value().data(), cb.value().data(),
                            policy->lambda(l + 1, config.layers), policy->alpha);
    }
    out.block_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (stop) {
      out.exit_layer = l + 1;
      break;
    }
  }
  out.states_a = xa;
  out.states_b = xb;
  return out;
}

#define PLG_INSTANTIATE_BACKBONE(T)                                                            \
  template Var<T> apply_mlp(Var<T>, const MlpT<Var<T>>&);                                      \
  template Var<T> residual_update(Var<T>, Var<T>, const MlpT<Var<T>>&);                        \
  template Var<T> self_attention_layer(Var<T>, Var<T>, const SelfAttentionT<Var<T>>&,          \
                                       std::size_t, std::vector<BasicTensor<T>>*);             \
  template std::pair<Var<T>, Var<T>> cross_attention_layer(                                    \
      Var<T>, Var<T>, const CrossAttentionT<Var<T>>&, std::size_t, std::vector<BasicTensor<T>>*); \
  template Var<T> almp_layer(Var<T>, const WireframeGraph&, Var<T>,                            \
                             const SelfAttentionT<Var<T>>&, std::size_t,                       \
                             std::vector<BasicTensor<T>>*);                                    \
  template BackboneOutput<T> run_backbone(const ImageNodes<T>&, const ImageNodes<T>&,          \
                                          const ParamTree<Var<T>>&, const ModelConfig&,        \
                                          const BackboneOptions&);

PLG_INSTANTIATE_BACKBONE(float)
PLG_INSTANTIATE_BACKBONE(double)

#undef PLG_INSTANTIATE_BACKBONE

}  // namespace plg
