#pragma once

#include <span>
#include <vector>

#include "plglue/model.hpp"

namespace plg {

/// Early-exit rule: after block l (< L) stop when the fraction of nodes of
/// both images whose confidence exceeds lambda_l is strictly above alpha.
/// The confidence classifiers themselves live in ModelParams::confidence.
struct ExitPolicy {
  bool enabled = true;
  double alpha = 0.95;
  // Per-block thresholds for blocks 1..L-1. Empty means default_lambda().
  std::vector<double> lambdas;

  double lambda(std::size_t layer, std::size_t layers) const;
  void validate(std::size_t layers) const;
};

/// 0.8 + 0.1 * exp(-4 l / L)
double default_lambda(std::size_t layer, std::size_t layers);

/// sigmoid(MLP(x)) per row, as an [N, 1] variable.
template <class T>
Var<T> node_confidences(Var<T> states, const MlpT<Var<T>>& mlp);

/// Value-only convenience wrapper around the tape version.
template <class T>
std::vector<T> node_confidences(const BasicTensor<T>& states, const MlpT<BasicTensor<T>>& mlp);

/// (1 / (N + M)) * #{c > lambda} > alpha over the concatenated confidences of
/// both images. An empty node set never exits.
template <class T>
bool should_exit(std::span<const T> confidences, double lambda, double alpha);

template <class T>
bool should_exit(std::span<const T> conf_a, std::span<const T> conf_b, double lambda,
                 double alpha);

}  // namespace plg
