#include "plglue/tape.hpp"

namespace plg {

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kLinear: return "linear";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kTranspose: return "transpose";
    case Primitive::kSoftmax: return "softmax";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kGelu: return "gelu";
    case Primitive::kLog: return "log";
    case Primitive::kConcat: return "concat";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kBroadcast: return "broadcast";
    case Primitive::kAffine: return "affine";
    case Primitive::kLayerNorm: return "layer_norm";
    case Primitive::kRotary: return "rotary";
    case Primitive::kSlice: return "slice";
    case Primitive::kGather: return "gather";
    case Primitive::kScatter: return "scatter";
    case Primitive::kMaximum: return "maximum";
    case Primitive::kReduce: return "reduce";
    case Primitive::kReshape: return "reshape";
  }
  return "unknown";
}

template <class T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::parameter(BasicTensor<T> value, ParamId id) {
  Node n;
  n.value = std::move(value);
  n.param = id;
  n.needs_grad = tracing_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(Primitive kind, BasicTensor<T> value, std::vector<std::size_t> inputs,
                       Backward backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  if (tracing_) {
    for (auto i : inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <class T>
BasicTensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    n.grad = BasicTensor<T>(n.value.shape(), T{0});
  }
  return n.grad;
}

template <class T>
typename Tape<T>::GradMap Tape<T>::backward(Var<T> output) {
  if (output.tape != this) throw Error("backward: output belongs to a different tape");
  if (value(output.id).size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " +
                     shape_str(value(output.id).shape()));
  }
  for (auto& n : nodes_) n.grad = BasicTensor<T>();
  grad(output.id)[0] = T{1};

  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() != n.value.size()) continue;
    n.backward(*this, i);
  }

  GradMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.param) continue;
    if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) {
      out[*n.param] = n.grad;
    } else {
      out[*n.param] = BasicTensor<T>(n.value.shape(), T{0});
    }
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace plg
