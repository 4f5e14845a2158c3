#include "plglue/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "plglue/ops.hpp"

namespace plg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
Vec2 minus(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }

// Distance from p to the infinite line through u and v.
double line_distance(Vec2 p, Vec2 u, Vec2 v) {
  const Vec2 d = minus(v, u);
  const double len = std::hypot(d.x, d.y);
  if (len == 0.0) return distance(p, u);
  return std::abs(cross(d, minus(p, u))) / len;
}

// Fraction of segment (u, v) covered by the projection of segment (p, q).
double coverage(Vec2 p, Vec2 q, Vec2 u, Vec2 v) {
  const Vec2 d = minus(v, u);
  const double len2 = dot(d, d);
  if (len2 == 0.0) return 0.0;
  const double t0 = dot(minus(p, u), d) / len2;
  const double t1 = dot(minus(q, u), d) / len2;
  const double lo = std::max(0.0, std::min(t0, t1));
  const double hi = std::min(1.0, std::max(t0, t1));
  return std::max(0.0, hi - lo);
}

// Both segments expressed in the same frame.
LinePairGeometry same_frame(Vec2 x0, Vec2 x1, Vec2 y0, Vec2 y1) {
  if (!finite(x0) || !finite(x1) || !finite(y0) || !finite(y1)) return {kInf, 0.0};
  const double dxy = 0.5 * (line_distance(x0, y0, y1) + line_distance(x1, y0, y1));
  const double dyx = 0.5 * (line_distance(y0, x0, x1) + line_distance(y1, x0, x1));
  return {std::max(dxy, dyx), std::min(coverage(x0, x1, y0, y1), coverage(y0, y1, x0, x1))};
}

// Row-wise and column-wise argmin with ties to the lowest index; mutual
// minima of finite entries become pairs.
std::vector<IndexPair> mutual_nearest(const std::vector<double>& cost, std::size_t n,
                                      std::size_t m) {
  std::vector<std::size_t> row_arg(n, m), col_arg(m, n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = kInf;
    for (std::size_t j = 0; j < m; ++j) {
      if (cost[i * m + j] < best) {
        best = cost[i * m + j];
        row_arg[i] = j;
      }
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    double best = kInf;
    for (std::size_t i = 0; i < n; ++i) {
      if (cost[i * m + j] < best) {
        best = cost[i * m + j];
        col_arg[j] = i;
      }
    }
  }
  std::vector<IndexPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_arg[i];
    if (j < m && col_arg[j] == i) out.emplace_back(i, j);
  }
  return out;
}

template <class T>
Var<T> neg_log_mean(Var<T> x, T weight) {
  return ops::affine(ops::mean(ops::log_clamped(x, T(kLogFloor))), -weight, T(0));
}

Homography sample_homography(const SynthConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> scale(c.min_scale, c.max_scale);
  const double theta = unit(rng) * c.max_rotation_deg * std::numbers::pi / 180.0;
  const double s = scale(rng);
  const double tx = unit(rng) * c.max_translation;
  const double ty = unit(rng) * c.max_translation;
  const double px = unit(rng) * c.max_perspective;
  const double py = unit(rng) * c.max_perspective;

  Eigen::Matrix3d centre = Eigen::Matrix3d::Identity();
  centre(0, 2) = -c.width / 2.0;
  centre(1, 2) = -c.height / 2.0;
  Eigen::Matrix3d similarity;
  similarity << s * std::cos(theta), -s * std::sin(theta), tx,  //
      s * std::sin(theta), s * std::cos(theta), ty,             //
      0.0, 0.0, 1.0;
  Eigen::Matrix3d projective = Eigen::Matrix3d::Identity();
  projective(2, 0) = px;
  projective(2, 1) = py;
  return Homography(Eigen::Matrix3d(centre.inverse() * projective * similarity * centre));
}

bool degenerate(const Homography& h) {
  const auto& m = h.matrix();
  const double det2 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return !(std::abs(det2) > 1e-3) || !h.invertible();
}

}  // namespace

void GtThresholds::validate() const {
  if (!(point > 0.0) || !(line > 0.0)) throw DataError("gt thresholds: point and line must be > 0");
  if (!(negative > point) || !(negative > line)) {
    throw DataError("gt thresholds: negative must exceed the point and line thresholds");
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw DataError("gt thresholds: overlap must lie in [0, 1)");
}

double point_distance(Vec2 a, Vec2 b, const Homography& h, const Homography& h_inv) {
  const Vec2 ha = h.apply(a);
  const Vec2 hb = h_inv.apply(b);
  if (!finite(ha) || !finite(hb)) return kInf;
  return std::max(distance(ha, b), distance(hb, a));
}

LinePairGeometry line_geometry(const LineSegment& a, const LineSegment& b, const Homography& h,
                               const Homography& h_inv) {
  const auto in_b = same_frame(h.apply(a.a), h.apply(a.b), b.a, b.b);
  const auto in_a = same_frame(a.a, a.b, h_inv.apply(b.a), h_inv.apply(b.b));
  return {std::max(in_a.distance, in_b.distance), std::min(in_a.overlap, in_b.overlap)};
}

GroundTruth gt_from_homography(const FeatureSet& a, const FeatureSet& b, const Homography& h,
                               const GtThresholds& t) {
  t.validate();
  const Homography h_inv = h.inverse();
  GroundTruth gt;

  {
    const std::size_t n = a.keypoints.size(), m = b.keypoints.size();
    std::vector<double> d(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        d[i * m + j] = point_distance(a.keypoints[i].pos, b.keypoints[j].pos, h, h_inv);
    for (auto [i, j] : mutual_nearest(d, n, m)) {
      if (d[i * m + j] < t.point) gt.points.positives.emplace_back(i, j);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double best = kInf;
      for (std::size_t j = 0; j < m; ++j) best = std::min(best, d[i * m + j]);
      if (best > t.negative) gt.points.unmatched_a.push_back(i);
    }
    for (std::size_t j = 0; j < m; ++j) {
      double best = kInf;
      for (std::size_t i = 0; i < n; ++i) best = std::min(best, d[i * m + j]);
      if (best > t.negative) gt.points.unmatched_b.push_back(j);
    }
  }

  {
    const std::size_t n = a.lines.size(), m = b.lines.size();
    std::vector<LinePairGeometry> g(n * m);
    std::vector<double> cost(n * m, kInf);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        g[i * m + j] = line_geometry(a.lines[i], b.lines[j], h, h_inv);
        if (g[i * m + j].distance < t.line && g[i * m + j].overlap > t.overlap) {
          cost[i * m + j] = g[i * m + j].distance;
        }
      }
    gt.lines.positives = mutual_nearest(cost, n, m);
    auto near = [&](std::size_t i, std::size_t j) {
      return g[i * m + j].distance < t.negative && g[i * m + j].overlap > 0.0;
    };
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < m && !any; ++j) any = near(i, j);
      if (!any) gt.lines.unmatched_a.push_back(i);
    }
    for (std::size_t j = 0; j < m; ++j) {
      bool any = false;
      for (std::size_t i = 0; i < n && !any; ++i) any = near(i, j);
      if (!any) gt.lines.unmatched_b.push_back(j);
    }
  }
  return gt;
}

void SynthConfig::validate() const {
  thresholds.validate();
  if (!(width > 2.0 * margin) || !(height > 2.0 * margin) || !(margin >= 0.0)) {
    throw DataError("synth: image must be larger than twice the margin");
  }
  if (descriptor_dim == 0) throw DataError("synth: descriptor_dim must be positive");
  if (!(min_scale <= max_scale) || !(noise_sigma >= 0.0) || !(min_line_length >= 0.0)) {
    throw DataError("synth: invalid scale range, noise or line length");
  }
  if (!(junction_fraction >= 0.0 && junction_fraction <= 1.0)) {
    throw DataError("synth: junction_fraction must lie in [0, 1]");
  }
  if (min_line_length > std::hypot(width - 2 * margin, height - 2 * margin)) {
    throw DataError("synth: min_line_length does not fit in the image");
  }
}

SynthPair synth_pair(const SynthConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> ux(c.margin, c.width - c.margin);
  std::uniform_real_distribution<double> uy(c.margin, c.height - c.margin);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(c.noise_sigma));

  SynthPair out;
  if (c.fixed_h) {
    if (degenerate(*c.fixed_h)) throw DataError("synth: the fixed homography is degenerate");
    out.h = *c.fixed_h;
  } else {
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      out.h = sample_homography(c, rng);
      found = !degenerate(out.h);
    }
    if (!found) throw DataError("synth: no well-conditioned homography after 100 attempts");
  }

  auto descriptor = [&] {
    std::vector<float> d(c.descriptor_dim);
    for (auto& v : d) v = gauss(rng);
    return d;
  };
  auto perturbed = [&](const std::vector<float>& d) {
    std::vector<float> out_d(d);
    if (c.noise_sigma > 0.0)
      for (auto& v : out_d) v += noise(rng);
    return out_d;
  };
  auto random_point = [&] { return Vec2{ux(rng), uy(rng)}; };
  auto random_end = [&](Vec2 start) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Vec2 end = random_point();
      if (distance(start, end) >= c.min_line_length) return end;
    }
    throw DataError("synth: could not place a line of the minimum length");
  };

  FeatureSet& a = out.a;
  FeatureSet& b = out.b;
  a.width = b.width = c.width;
  a.height = b.height = c.height;

  for (std::size_t i = 0; i < c.points; ++i) a.keypoints.push_back({random_point(), descriptor()});
  for (std::size_t i = 0; i < c.lines; ++i) {
    Vec2 start = random_point();
    if (i > 0 && u01(rng) < c.junction_fraction) {
      const auto& prev = a.lines[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)];
      start = u01(rng) < 0.5 ? prev.a : prev.b;
    }
    const Vec2 end = random_end(start);
    a.lines.push_back({start, end, descriptor(), descriptor()});
  }

  auto inside = [&](Vec2 p) {
    return finite(p) && p.x >= 0.0 && p.x <= c.width && p.y >= 0.0 && p.y <= c.height;
  };
  for (const auto& kp : a.keypoints) {
    const Vec2 p = out.h.apply(kp.pos);
    if (inside(p)) b.keypoints.push_back({p, perturbed(kp.desc)});
  }
  for (const auto& l : a.lines) {
    const Vec2 p = out.h.apply(l.a), q = out.h.apply(l.b);
    if (inside(p) && inside(q)) b.lines.push_back({p, q, perturbed(l.desc_a), perturbed(l.desc_b)});
  }
  for (std::size_t i = 0; i < c.spurious_points; ++i) {
    b.keypoints.push_back({random_point(), descriptor()});
  }
  for (std::size_t i = 0; i < c.spurious_lines; ++i) {
    const Vec2 start = random_point();
    const Vec2 end = random_end(start);
    b.lines.push_back({start, end, descriptor(), descriptor()});
  }
  if (c.shuffle) {
    std::shuffle(b.keypoints.begin(), b.keypoints.end(), rng);
    std::shuffle(b.lines.begin(), b.lines.end(), rng);
    for (auto& l : b.lines) {
      if (u01(rng) < 0.5) {
        std::swap(l.a, l.b);
        std::swap(l.desc_a, l.desc_b);
      }
    }
  }
  out.gt = gt_from_homography(a, b, out.h, c.thresholds);
  return out;
}

template <class T>
Var<T> layer_loss(Var<T> scores, Var<T> match_a, Var<T> match_b, const GtComponent& gt) {
  auto matched = neg_log_mean(ops::gather_elements(scores, gt.positives), T(1));
  auto rest_a = neg_log_mean(ops::affine(ops::gather_rows(match_a, gt.unmatched_a), T(-1), T(1)),
                             T(0.5));
  auto rest_b = neg_log_mean(ops::affine(ops::gather_rows(match_b, gt.unmatched_b), T(-1), T(1)),
                             T(0.5));
  return ops::add(ops::add(matched, rest_a), rest_b);
}

template <class T>
Var<T> total_loss(const std::vector<Var<T>>& point_losses, const std::vector<Var<T>>& line_losses,
                  std::size_t layers) {
  if (layers == 0 || point_losses.size() != layers || line_losses.size() != layers) {
    throw DataError("total_loss: expected " + std::to_string(layers) + " layer losses, got " +
                    std::to_string(point_losses.size()) + " point and " +
                    std::to_string(line_losses.size()) + " line");
  }
  Var<T> acc = ops::add(point_losses[0], line_losses[0]);
  for (std::size_t l = 1; l < layers; ++l) {
    acc = ops::add(acc, ops::add(point_losses[l], line_losses[l]));
  }
  return ops::affine(acc, T(1) / T(2 * layers), T(0));
}

double total_loss(const std::vector<double>& point_losses, const std::vector<double>& line_losses,
                  std::size_t layers) {
  if (layers == 0 || point_losses.size() != layers || line_losses.size() != layers) {
    throw DataError("total_loss: expected " + std::to_string(layers) + " layer losses");
  }
  double acc = 0.0;
  for (std::size_t l = 0; l < layers; ++l) acc += point_losses[l] + line_losses[l];
  return acc / double(2 * layers);
}

template <class T>
Var<T> compute_loss(Tape<T>& tape, const ParamTree<Var<T>>& params, const ModelConfig& config,
                    const PreparedPair& pair, const GroundTruth& gt, LossBreakdown* breakdown) {
  BackboneOptions options;
  options.supervise = true;
  ForwardResult<T> fwd = forward_pair(tape, params, config, pair, options);
  std::vector<Var<T>> point_losses, line_losses;
  for (const auto& [xa, xb] : fwd.backbone.snapshots) {
    auto [pts, lines] = assign(xa, xb, pair, params.heads);
    point_losses.push_back(layer_loss(pts.scores, pts.match_a, pts.match_b, gt.points));
    line_losses.push_back(layer_loss(lines.scores, lines.match_a, lines.match_b, gt.lines));
  }
  auto total = total_loss(point_losses, line_losses, config.layers);
  if (breakdown) {
    breakdown->point.clear();
    breakdown->line.clear();
    for (auto& v : point_losses) breakdown->point.push_back(static_cast<double>(v.value().item()));
    for (auto& v : line_losses) breakdown->line.push_back(static_cast<double>(v.value().item()));
    breakdown->total = static_cast<double>(total.value().item());
  }
  return total;
}

GradCheckReport loss_grad_check(const ModelParams& params, const PreparedPair& pair,
                                const GroundTruth& gt, double step) {
  const auto replica = params.cast<double>();
  const TracedFn<double> f = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
    std::size_t k = 0;
    const auto tree = map_tree<Var<double>>(
        replica.tree, [&](const std::string&, const TensorD&) { return vars[k++]; });
    return compute_loss(tape, tree, replica.config, pair, gt);
  };
  return grad_check<double>(f, replica.flatten(), step);
}

TrainResult train_tiny(ModelParams& params, const std::vector<TrainingPair>& pairs,
                       std::size_t steps, double learning_rate,
                       const std::function<void(std::size_t, double)>& on_step) {
  if (pairs.empty()) throw DataError("train_tiny: no training pairs");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw DataError("train_tiny: learning rate must be finite and >= 0");
  }
  const float lr = static_cast<float>(learning_rate);
  TrainResult result;
  auto evaluate = [&](std::size_t step, bool with_grad) {
    const auto& tp = pairs[step % pairs.size()];
    Tape<float> tape(with_grad);
    const auto bound = bind_params(tape, params);
    auto loss = compute_loss(tape, bound, params.config, tp.pair, tp.gt);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NumericError("train_tiny: non-finite loss at step " + std::to_string(step));
    }
    if (with_grad) {
      auto grads = tape.backward(loss);
      auto flat = params.flatten();
      for (std::size_t p = 0; p < flat.size(); ++p) {
        auto& g = grads.at(p);
        auto d = flat[p].data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
      }
      params.assign_flat(flat);
    }
    return value;
  };
  for (std::size_t step = 0; step < steps; ++step) {
    const double loss = evaluate(step, true);
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  result.final_loss = evaluate(steps, false);
  return result;
}

#define PLG_INSTANTIATE_SUPERVISION(T)                                                        \
  template Var<T> layer_loss(Var<T>, Var<T>, Var<T>, const GtComponent&);                     \
  template Var<T> total_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&,          \
                             std::size_t);                                                    \
  template Var<T> compute_loss(Tape<T>&, const ParamTree<Var<T>>&, const ModelConfig&,        \
                               const PreparedPair&, const GroundTruth&, LossBreakdown*);

PLG_INSTANTIATE_SUPERVISION(float)
PLG_INSTANTIATE_SUPERVISION(double)

#undef PLG_INSTANTIATE_SUPERVISION

}  // namespace plg
