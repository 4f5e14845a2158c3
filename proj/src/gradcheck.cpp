#include "plglue/gradcheck.hpp"

#include <cmath>

namespace plg {
namespace {

template <class T>
double evaluate(const TracedFn<T>& f, const std::vector<BasicTensor<T>>& params, std::size_t p,
                std::size_t e) {
  Tape<T> tape(false);
  std::vector<Var<T>> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter(params[i], i));
  const double v = static_cast<double>(f(tape, vars).value().item());
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite loss when probing parameter " + std::to_string(p) +
                       " entry " + std::to_string(e));
  }
  return v;
}

}  // namespace

template <class T>
GradCheckReport grad_check(const TracedFn<T>& f, const std::vector<BasicTensor<T>>& params,
                           double step) {
  if (!(step > 0.0)) throw Error("grad_check: step must be positive");

  Tape<T> tape(true);
  std::vector<Var<T>> vars;
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter(params[i], i));
  Var<T> out = f(tape, vars);
  if (!out.value().all_finite()) throw NumericError("grad_check: non-finite loss at the base point");
  auto grads = tape.backward(out);

  GradCheckReport report;
  std::vector<BasicTensor<T>> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& g = grads.at(p);
    for (std::size_t e = 0; e < params[p].size(); ++e) {
      const T orig = params[p][e];
      probe[p][e] = orig + static_cast<T>(step);
      const double up = evaluate(f, probe, p, e);
      probe[p][e] = orig - static_cast<T>(step);
      const double down = evaluate(f, probe, p, e);
      probe[p][e] = orig;

      const double numeric = (up - down) / (2.0 * step);
      const double analytic = static_cast<double>(g[e]);
      const double err =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++report.entries_checked;
      if (err > report.max_error || report.entries_checked == 1) {
        report.max_error = err;
        report.param = p;
        report.entry = e;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport grad_check(const TracedFn<float>&, const std::vector<BasicTensor<float>>&,
                                    double);
template GradCheckReport grad_check(const TracedFn<double>&,
                                    const std::vector<BasicTensor<double>>&, double);

}  // namespace plg
