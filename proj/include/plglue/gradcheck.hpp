#pragma once

#include <functional>
#include <vector>

#include "plglue/tape.hpp"

namespace plg {

/// A scalar function of a list of parameter tensors, written against the
/// tape so it can be both differentiated and re-evaluated.
template <class T>
using TracedFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

struct GradCheckReport {
  double max_error = 0.0;  // max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
  std::size_t param = 0;   // location of the worst entry
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares tape gradients against central finite differences with the given
/// step. Throws NumericError naming the parameter entry when a probe
/// produces a non-finite loss.
template <class T>
GradCheckReport grad_check(const TracedFn<T>& f, const std::vector<BasicTensor<T>>& params,
                           double step);

extern template GradCheckReport grad_check(const TracedFn<float>&,
                                           const std::vector<BasicTensor<float>>&, double);
extern template GradCheckReport grad_check(const TracedFn<double>&,
                                           const std::vector<BasicTensor<double>>&, double);

}  // namespace plg
