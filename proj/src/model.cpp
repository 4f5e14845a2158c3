#include "plglue/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace plg {

void ModelConfig::validate() const {
  if (layers < 1) throw DataError("model config: layers must be >= 1");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw DataError("model config: head_dim must be even and positive, got " +
                    std::to_string(head_dim));
  }
  if (heads == 0 || dim != head_dim * heads) {
    throw DataError("model config: dim (" + std::to_string(dim) + ") must equal head_dim (" +
                    std::to_string(head_dim) + ") x heads (" + std::to_string(heads) + ")");
  }
}

namespace {

LinearT<Shape> linear_shape(std::size_t in, std::size_t out) { return {{out, in}, {out}}; }

MlpT<Shape> mlp_shape(std::size_t in, std::size_t hidden, std::size_t out) {
  return {{in}, {in}, linear_shape(in, hidden), linear_shape(hidden, out)};
}

}  // namespace

ParamTree<Shape> param_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim;
  auto t = tree_skeleton<Shape>(c.layers, c.layers - 1);
  t.rotary = {c.head_dim / 2, 2};
  const SelfAttentionT<Shape> self{linear_shape(d, d), linear_shape(d, d), linear_shape(d, d),
                                   linear_shape(d, d), mlp_shape(2 * d, 2 * d, d)};
  const CrossAttentionT<Shape> cross{linear_shape(d, d), linear_shape(d, d), linear_shape(d, d),
                                     mlp_shape(2 * d, 2 * d, d)};
  for (auto& b : t.blocks) b = {self, self, cross};
  t.heads = {linear_shape(d, d), linear_shape(d, 1), linear_shape(d, d), linear_shape(d, 1)};
  for (auto& m : t.confidence) m = mlp_shape(d, 2 * d, 1);
  return t;
}

template <class T>
std::vector<std::string> BasicModelParams<T>::names() const {
  std::vector<std::string> out;
  visit_tree(tree, [&](const std::string& n, const BasicTensor<T>&) { out.push_back(n); });
  return out;
}

template <class T>
std::vector<BasicTensor<T>> BasicModelParams<T>::flatten() const {
  std::vector<BasicTensor<T>> out;
  visit_tree(tree, [&](const std::string&, const BasicTensor<T>& t) { out.push_back(t); });
  return out;
}

template <class T>
void BasicModelParams<T>::assign_flat(const std::vector<BasicTensor<T>>& values) {
  std::size_t i = 0;
  visit_tree(tree, [&](const std::string& n, BasicTensor<T>& t) {
    if (i >= values.size()) throw DataError("assign_flat: too few tensors");
    if (values[i].shape() != t.shape()) {
      throw ShapeError("assign_flat: " + n + " expects " + shape_str(t.shape()) + ", got " +
                       shape_str(values[i].shape()));
    }
    t = values[i++];
  });
  if (i != values.size()) throw DataError("assign_flat: too many tensors");
}

template <class T>
std::size_t BasicModelParams<T>::count() const {
  std::size_t n = 0;
  visit_tree(tree, [&](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
  return n;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  const auto shapes = param_shapes(config);
  std::mt19937_64 rng(seed);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  auto tree = map_tree<Tensor>(shapes, [&](const std::string& name, const Shape& shape) {
    Tensor t(shape);
    if (name == "rotary.bases") {
      std::uniform_real_distribution<float> u(-std::numbers::pi_v<float>, std::numbers::pi_v<float>);
      for (auto& v : t.data()) v = u(rng);
    } else if (ends_with(name, ".norm_gain")) {
      for (auto& v : t.data()) v = 1.0f;
    } else if (ends_with(name, ".weight")) {
      const float bound = static_cast<float>(std::sqrt(6.0 / double(shape[0] + shape[1])));
      std::uniform_real_distribution<float> u(-bound, bound);
      for (auto& v : t.data()) v = u(rng);
    }
    return t;
  });
  return {config, std::move(tree)};
}

template <class T>
ParamTree<Var<T>> bind_params(Tape<T>& tape, const BasicModelParams<T>& params) {
  ParamId next = 0;
  return map_tree<Var<T>>(params.tree, [&](const std::string&, const BasicTensor<T>& t) {
    return tape.parameter(t, next++);
  });
}

template struct BasicModelParams<float>;
template struct BasicModelParams<double>;
template ParamTree<Var<float>> bind_params(Tape<float>&, const BasicModelParams<float>&);
template ParamTree<Var<double>> bind_params(Tape<double>&, const BasicModelParams<double>&);

}  // namespace plg
