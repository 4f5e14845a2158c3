#include "plglue/assignment.hpp"

#include <algorithm>
#include <limits>

#include "plglue/ops.hpp"

namespace plg {
namespace {

template <class T>
Var<T> project(Var<T> x, const LinearT<Var<T>>& l) {
  return ops::linear(x, l.weight, l.bias);
}

template <class T>
Tensor to_float(const BasicTensor<T>& t) {
  return t.template cast<float>();
}

}  // namespace

template <class T>
Var<T> dual_softmax_scores(Var<T> sim, Var<T> match_a, Var<T> match_b) {
  const Shape shape = sim.shape();
  auto joint = ops::mul(ops::softmax(sim, 1), ops::softmax(sim, 0));
  auto gate = ops::mul(ops::broadcast(match_a, shape),
                       ops::broadcast(ops::transpose(match_b), shape));
  return ops::mul(joint, gate);
}

template <class T>
AssignmentVars<T> point_assignment(Var<T> states_a, Var<T> states_b,
                                   const std::vector<std::size_t>& nodes_a,
                                   const std::vector<std::size_t>& nodes_b,
                                   const HeadsT<Var<T>>& heads) {
  auto xa = ops::gather_rows(states_a, nodes_a);
  auto xb = ops::gather_rows(states_b, nodes_b);
  AssignmentVars<T> out;
  out.sim = ops::matmul_nt(project(xa, heads.point_proj), project(xb, heads.point_proj));
  out.match_a = ops::sigmoid(project(xa, heads.point_match));
  out.match_b = ops::sigmoid(project(xb, heads.point_match));
  out.scores = dual_softmax_scores(out.sim, out.match_a, out.match_b);
  return out;
}

template <class T>
LineAssignmentVars<T> line_assignment(Var<T> states_a, Var<T> states_b,
                                      const std::vector<LineEdge>& lines_a,
                                      const std::vector<LineEdge>& lines_b,
                                      const HeadsT<Var<T>>& heads) {
  std::vector<std::size_t> sa, ea, sb, eb;
  for (const auto& l : lines_a) {
    sa.push_back(l.a);
    ea.push_back(l.b);
  }
  for (const auto& l : lines_b) {
    sb.push_back(l.a);
    eb.push_back(l.b);
  }
  auto ya = project(states_a, heads.line_proj);
  auto yb = project(states_b, heads.line_proj);
  auto ys_a = ops::gather_rows(ya, sa), ye_a = ops::gather_rows(ya, ea);
  auto ys_b = ops::gather_rows(yb, sb), ye_b = ops::gather_rows(yb, eb);
  auto straight = ops::add(ops::matmul_nt(ys_a, ys_b), ops::matmul_nt(ye_a, ye_b));
  auto swapped = ops::add(ops::matmul_nt(ys_a, ye_b), ops::matmul_nt(ye_a, ys_b));

  LineAssignmentVars<T> out;
  out.sim = ops::maximum(straight, swapped);
  const auto& sv = straight.value();
  const auto& wv = swapped.value();
  out.swapped.resize(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i) out.swapped[i] = wv[i] > sv[i] ? 1 : 0;

  auto endpoint_match_a = ops::sigmoid(project(states_a, heads.line_match));
  auto endpoint_match_b = ops::sigmoid(project(states_b, heads.line_match));
  out.match_a = ops::affine(
      ops::add(ops::gather_rows(endpoint_match_a, sa), ops::gather_rows(endpoint_match_a, ea)),
      T(0.5), T(0));
  out.match_b = ops::affine(
      ops::add(ops::gather_rows(endpoint_match_b, sb), ops::gather_rows(endpoint_match_b, eb)),
      T(0.5), T(0));
  out.scores = dual_softmax_scores(out.sim, out.match_a, out.match_b);
  return out;
}

template <class T>
AssignmentResult to_result(const AssignmentVars<T>& points, const LineAssignmentVars<T>& lines) {
  AssignmentResult r;
  r.point_scores = to_float(points.scores.value());
  r.point_match_a = to_float(points.match_a.value().reshaped({points.match_a.dim(0)}));
  r.point_match_b = to_float(points.match_b.value().reshaped({points.match_b.dim(0)}));
  r.line_scores = to_float(lines.scores.value());
  r.line_match_a = to_float(lines.match_a.value().reshaped({lines.match_a.dim(0)}));
  r.line_match_b = to_float(lines.match_b.value().reshaped({lines.match_b.dim(0)}));
  r.line_swapped = lines.swapped;
  return r;
}

template <class T>
std::vector<ScoredMatch> filter_matches(const BasicTensor<T>& s, double tau) {
  if (s.rank() != 2) throw ShapeError("filter_matches: scores must be a matrix");
  const std::size_t n = s.dim(0), m = s.dim(1);
  constexpr T lowest = std::numeric_limits<T>::lowest();
  // Best and runner-up per row / column; strict dominance means best > second.
  std::vector<T> row_best(n, lowest), row_second(n, lowest);
  std::vector<T> col_best(m, lowest), col_second(m, lowest);
  auto push = [](T v, T& best, T& second) {
    if (v > best) {
      second = best;
      best = v;
    } else if (v > second) {
      second = v;
    }
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      push(s(i, j), row_best[i], row_second[i]);
      push(s(i, j), col_best[j], col_second[j]);
    }

  std::vector<ScoredMatch> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const T v = s(i, j);
      if (!(static_cast<double>(v) > tau)) continue;
      if (v != row_best[i] || !(v > row_second[i])) continue;
      if (v != col_best[j] || !(v > col_second[j])) continue;
      out.push_back({i, j, static_cast<double>(v)});
    }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  return out;
}

MatchSet filter_assignment(const AssignmentResult& result, double tau) {
  MatchSet ms;
  ms.points = filter_matches(result.point_scores, tau);
  const std::size_t cols = result.line_scores.rank() == 2 ? result.line_scores.dim(1) : 0;
  for (const auto& m : filter_matches(result.line_scores, tau)) {
    ms.lines.push_back({m.i, m.j, m.score, result.line_swapped[m.i * cols + m.j] != 0});
  }
  return ms;
}

#define PLG_INSTANTIATE_ASSIGNMENT(T)                                                          \
  template Var<T> dual_softmax_scores(Var<T>, Var<T>, Var<T>);                                 \
  template AssignmentVars<T> point_assignment(Var<T>, Var<T>, const std::vector<std::size_t>&, \
                                              const std::vector<std::size_t>&,                 \
                                              const HeadsT<Var<T>>&);                          \
  template LineAssignmentVars<T> line_assignment(Var<T>, Var<T>, const std::vector<LineEdge>&, \
                                                 const std::vector<LineEdge>&,                 \
                                                 const HeadsT<Var<T>>&);                       \
  template AssignmentResult to_result(const AssignmentVars<T>&, const LineAssignmentVars<T>&); \
  template std::vector<ScoredMatch> filter_matches(const BasicTensor<T>&, double);

PLG_INSTANTIATE_ASSIGNMENT(float)
PLG_INSTANTIATE_ASSIGNMENT(double)

#undef PLG_INSTANTIATE_ASSIGNMENT

}  // namespace plg
