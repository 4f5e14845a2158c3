#include "plglue/adaptivity.hpp"

#include <cmath>
#include <string>

#include "plglue/backbone.hpp"
#include "plglue/ops.hpp"

namespace plg {

double default_lambda(std::size_t layer, std::size_t layers) {
  return 0.8 + 0.1 * std::exp(-4.0 * double(layer) / double(layers));
}

double ExitPolicy::lambda(std::size_t layer, std::size_t layers) const {
  if (lambdas.empty()) return default_lambda(layer, layers);
  if (layer == 0 || layer > lambdas.size()) {
    throw DataError("exit policy: no threshold for block " + std::to_string(layer));
  }
  return lambdas[layer - 1];
}

void ExitPolicy::validate(std::size_t layers) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DataError("exit policy: alpha must lie in [0, 1]");
  if (!lambdas.empty() && lambdas.size() + 1 != layers) {
    throw DataError("exit policy: expected " + std::to_string(layers - 1) + " thresholds, got " +
                    std::to_string(lambdas.size()));
  }
  for (double l : lambdas) {
    if (!(l > 0.0 && l < 1.0)) throw DataError("exit policy: thresholds must lie in (0, 1)");
  }
}

template <class T>
Var<T> node_confidences(Var<T> states, const MlpT<Var<T>>& mlp) {
  return ops::sigmoid(apply_mlp(states, mlp));
}

template <class T>
std::vector<T> node_confidences(const BasicTensor<T>& states, const MlpT<BasicTensor<T>>& mlp) {
  Tape<T> tape(false);
  MlpT<Var<T>> bound{tape.constant(mlp.norm_gain),
                     tape.constant(mlp.norm_bias),
                     {tape.constant(mlp.hidden.weight), tape.constant(mlp.hidden.bias)},
                     {tape.constant(mlp.out.weight), tape.constant(mlp.out.bias)}};
  const auto c = node_confidences(tape.constant(states), bound).value();
  return {c.data().begin(), c.data().end()};
}

template <class T>
bool should_exit(std::span<const T> confidences, double lambda, double alpha) {
  if (confidences.empty()) return false;
  std::size_t confident = 0;
  for (T c : confidences) confident += static_cast<double>(c) > lambda ? 1 : 0;
  return double(confident) / double(confidences.size()) > alpha;
}

template <class T>
bool should_exit(std::span<const T> conf_a, std::span<const T> conf_b, double lambda,
                 double alpha) {
  std::vector<T> all(conf_a.begin(), conf_a.end());
  all.insert(all.end(), conf_b.begin(), conf_b.end());
  return should_exit<T>(std::span<const T>(all), lambda, alpha);
}

template Var<float> node_confidences(Var<float>, const MlpT<Var<float>>&);
template Var<double> node_confidences(Var<double>, const MlpT<Var<double>>&);
template std::vector<float> node_confidences(const Tensor&, const MlpT<Tensor>&);
template std::vector<double> node_confidences(const TensorD&, const MlpT<TensorD>&);
template bool should_exit(std::span<const float>, double, double);
template bool should_exit(std::span<const double>, double, double);
template bool should_exit(std::span<const float>, std::span<const float>, double, double);
template bool should_exit(std::span<const double>, std::span<const double>, double, double);

}  // namespace plg
