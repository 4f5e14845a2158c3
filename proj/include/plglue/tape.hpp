#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "plglue/tensor.hpp"

namespace plg {

using ParamId = std::size_t;

enum class Primitive {
  kLeaf,
  kLinear,
  kMatmul,
  kTranspose,
  kSoftmax,
  kSigmoid,
  kGelu,
  kLog,
  kConcat,
  kAdd,
  kSub,
  kMul,
  kBroadcast,
  kAffine,
  kLayerNorm,
  kRotary,
  kSlice,
  kGather,
  kScatter,
  kMaximum,
  kReduce,
  kReshape,
};

const char* primitive_name(Primitive kind);

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Ordered record of primitive applications. Values are always kept so the
/// forward pass can run on the same code path; backward rules are only
/// stored when tracing is enabled. Because nodes are appended after their
/// inputs, reverse insertion order is a reverse topological order.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;
  using GradMap = std::unordered_map<ParamId, BasicTensor<T>>;

  explicit Tape(bool tracing = true) : tracing_(tracing) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracing() const { return tracing_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(BasicTensor<T> value);
  Var<T> parameter(BasicTensor<T> value, ParamId id);

  /// Appends an op output. `backward` is dropped unless tracing and at least
  /// one input requires a gradient.
  Var<T> record(Primitive kind, BasicTensor<T> value, std::vector<std::size_t> inputs,
                Backward backward);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  Primitive kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient buffer of a node, zero-initialised on first access.
  BasicTensor<T>& grad(std::size_t id);

  /// Reverse sweep from a scalar output. Every registered parameter appears in
  /// the result; unreachable ones get zeros.
  GradMap backward(Var<T> output);

 private:
  struct Node {
    Primitive kind = Primitive::kLeaf;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    std::optional<ParamId> param;
    bool needs_grad = false;
  };

  bool tracing_;
  std::vector<Node> nodes_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace plg
