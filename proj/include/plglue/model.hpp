#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plglue/tape.hpp"

namespace plg {

/// Architecture hyperparameters.
struct ModelConfig {
  std::size_t layers = 9;    // L blocks of self / line message passing / cross
  std::size_t dim = 256;     // D
  std::size_t head_dim = 64; // K
  std::size_t heads = 4;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// The learned parameters form a fixed tree. The leaf type is a template
// argument so the same layout describes stored tensors, shapes and
// tape-bound variables.

template <class L>
struct LinearT {
  L weight;  // [out, in]
  L bias;    // [out]
};

/// layer-normalize -> linear (hidden 2D) -> gelu -> linear (output)
template <class L>
struct MlpT {
  L norm_gain;
  L norm_bias;
  LinearT<L> hidden;
  LinearT<L> out;
};

template <class L>
struct SelfAttentionT {
  LinearT<L> query, key, value, out;
  MlpT<L> mlp;
};

/// Cross layers score with keys on both sides, so there is no query.
template <class L>
struct CrossAttentionT {
  LinearT<L> key, value, out;
  MlpT<L> mlp;
};

template <class L>
struct BlockT {
  SelfAttentionT<L> self;
  SelfAttentionT<L> almp;
  CrossAttentionT<L> cross;
};

template <class L>
struct HeadsT {
  LinearT<L> point_proj;   // similarity projection for points
  LinearT<L> point_match;  // [1, D] point matchability
  LinearT<L> line_proj;    // endpoint projection for lines
  LinearT<L> line_match;   // [1, D] endpoint matchability for lines
};

template <class L>
struct ParamTree {
  L rotary;  // [K/2, 2], shared by every layer and head
  std::vector<BlockT<L>> blocks;
  HeadsT<L> heads;
  std::vector<MlpT<L>> confidence;  // one classifier per block 1..L-1
};

namespace detail {

template <class Lin, class F>
void visit_linear(Lin& l, const std::string& p, F& f) {
  f(p + ".weight", l.weight);
  f(p + ".bias", l.bias);
}

template <class Mlp, class F>
void visit_mlp(Mlp& m, const std::string& p, F& f) {
  f(p + ".norm_gain", m.norm_gain);
  f(p + ".norm_bias", m.norm_bias);
  visit_linear(m.hidden, p + ".hidden", f);
  visit_linear(m.out, p + ".out", f);
}

template <class Att, class F>
void visit_self(Att& a, const std::string& p, F& f) {
  visit_linear(a.query, p + ".query", f);
  visit_linear(a.key, p + ".key", f);
  visit_linear(a.value, p + ".value", f);
  visit_linear(a.out, p + ".out", f);
  visit_mlp(a.mlp, p + ".mlp", f);
}

template <class Att, class F>
void visit_cross(Att& a, const std::string& p, F& f) {
  visit_linear(a.key, p + ".key", f);
  visit_linear(a.value, p + ".value", f);
  visit_linear(a.out, p + ".out", f);
  visit_mlp(a.mlp, p + ".mlp", f);
}

}  // namespace detail

/// Calls f(name, leaf) for every leaf in a fixed order. Works on const and
/// mutable trees.
template <class Tree, class F>
void visit_tree(Tree& tree, F&& f) {
  f(std::string("rotary.bases"), tree.rotary);
  for (std::size_t i = 0; i < tree.blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    detail::visit_self(tree.blocks[i].self, p + ".self", f);
    detail::visit_self(tree.blocks[i].almp, p + ".almp", f);
    detail::visit_cross(tree.blocks[i].cross, p + ".cross", f);
  }
  detail::visit_linear(tree.heads.point_proj, "heads.point_proj", f);
  detail::visit_linear(tree.heads.point_match, "heads.point_match", f);
  detail::visit_linear(tree.heads.line_proj, "heads.line_proj", f);
  detail::visit_linear(tree.heads.line_match, "heads.line_match", f);
  for (std::size_t i = 0; i < tree.confidence.size(); ++i) {
    detail::visit_mlp(tree.confidence[i], "confidence." + std::to_string(i), f);
  }
}

template <class L>
ParamTree<L> tree_skeleton(std::size_t blocks, std::size_t confidence) {
  ParamTree<L> t;
  t.blocks.resize(blocks);
  t.confidence.resize(confidence);
  return t;
}

/// Builds a tree of another leaf type with fn(name, leaf) applied leafwise.
template <class To, class From, class Fn>
ParamTree<To> map_tree(const ParamTree<From>& src, Fn&& fn) {
  auto out = tree_skeleton<To>(src.blocks.size(), src.confidence.size());
  std::vector<const From*> leaves;
  visit_tree(src, [&](const std::string&, const From& l) { leaves.push_back(&l); });
  std::size_t i = 0;
  visit_tree(out, [&](const std::string& name, To& l) { l = fn(name, *leaves[i++]); });
  return out;
}

/// Expected shape of every parameter for a configuration.
ParamTree<Shape> param_shapes(const ModelConfig& config);

/// All learned tensors plus the configuration they were built for.
template <class T>
struct BasicModelParams {
  ModelConfig config;
  ParamTree<BasicTensor<T>> tree;

  std::vector<std::string> names() const;
  std::vector<BasicTensor<T>> flatten() const;
  void assign_flat(const std::vector<BasicTensor<T>>& values);
  std::size_t count() const;

  template <class U>
  BasicModelParams<U> cast() const {
    return {config, map_tree<BasicTensor<U>>(
                        tree, [](const std::string&, const BasicTensor<T>& t) { return t.template cast<U>(); })};
  }
};

using ModelParams = BasicModelParams<float>;

/// Seeded initialisation: linear weights uniform in +-sqrt(6 / (fan_in + fan_out)),
/// biases zero, norm gains one, rotary bases uniform in [-pi, pi].
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Registers every tensor as a tape parameter. ParamIds follow visit order,
/// i.e. the index into flatten().
template <class T>
ParamTree<Var<T>> bind_params(Tape<T>& tape, const BasicModelParams<T>& params);

}  // namespace plg
