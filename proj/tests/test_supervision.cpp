#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "plglue/supervision.hpp"
#include "test_util.hpp"

namespace plg {
namespace {

using M3 = std::array<std::array<double, 3>, 3>;
constexpr double kInf = std::numeric_limits<double>::infinity();

// ---- independent geometry ---------------------------------------------------------

M3 to_m3(const Homography& h) {
  M3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = h.matrix()(r, c);
  return m;
}

M3 adjugate_inverse(const M3& m) {
  M3 a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const int r1 = (c + 1) % 3, r2 = (c + 2) % 3, c1 = (r + 1) % 3, c2 = (r + 2) % 3;
      a[r][c] = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    }
  const double det = m[0][0] * a[0][0] + m[0][1] * a[1][0] + m[0][2] * a[2][0];
  for (auto& row : a)
    for (auto& v : row) v /= det;
  return a;
}

Vec2 map(const M3& m, Vec2 p) {
  const double w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
  return {(m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
          (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w};
}

double dist(Vec2 a, Vec2 b) { return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)); }

double perp(Vec2 p, Vec2 u, Vec2 v) {
  // Area of the parallelogram over the base length.
  return std::abs((v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x)) / dist(u, v);
}

double covered(Vec2 p, Vec2 q, Vec2 u, Vec2 v) {
  const double l2 = (v.x - u.x) * (v.x - u.x) + (v.y - u.y) * (v.y - u.y);
  auto t = [&](Vec2 x) { return ((x.x - u.x) * (v.x - u.x) + (x.y - u.y) * (v.y - u.y)) / l2; };
  const double lo = std::clamp(std::min(t(p), t(q)), 0.0, 1.0);
  const double hi = std::clamp(std::max(t(p), t(q)), 0.0, 1.0);
  return hi - lo;
}

struct Geo {
  double d, o;
};

Geo frame_geo(Vec2 x0, Vec2 x1, Vec2 y0, Vec2 y1) {
  const double d = std::max((perp(x0, y0, y1) + perp(x1, y0, y1)) / 2,
                            (perp(y0, x0, x1) + perp(y1, x0, x1)) / 2);
  return {d, std::min(covered(x0, x1, y0, y1), covered(y0, y1, x0, x1))};
}

// Exhaustive GT with the documented criteria.
GroundTruth oracle_gt(const FeatureSet& a, const FeatureSet& b, const Homography& h,
                      const GtThresholds& t) {
  const M3 f = to_m3(h), g = adjugate_inverse(f);
  GroundTruth gt;
  auto mutual = [](const std::vector<std::vector<double>>& c, GtComponent& out) {
    const std::size_t n = c.size(), m = n ? c[0].size() : 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (!(c[i][j] < kInf)) continue;
        bool best = true;
        for (std::size_t k = 0; k < m && best; ++k) best = k == j || c[i][j] < c[i][k];
        for (std::size_t k = 0; k < n && best; ++k) best = k == i || c[i][j] < c[k][j];
        if (best) out.positives.emplace_back(i, j);
      }
  };

  const std::size_t np = a.keypoints.size(), mp = b.keypoints.size();
  std::vector<std::vector<double>> d(np, std::vector<double>(mp));
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < mp; ++j) {
      const Vec2 pa = a.keypoints[i].pos, pb = b.keypoints[j].pos;
      d[i][j] = std::max(dist(map(f, pa), pb), dist(map(g, pb), pa));
    }
  auto cost = d;
  for (auto& row : cost)
    for (auto& v : row)
      if (!(v < t.point)) v = kInf;
  mutual(cost, gt.points);
  for (std::size_t i = 0; i < np; ++i)
    if (std::all_of(d[i].begin(), d[i].end(), [&](double v) { return v > t.negative; }))
      gt.points.unmatched_a.push_back(i);
  for (std::size_t j = 0; j < mp; ++j) {
    bool far = true;
    for (std::size_t i = 0; i < np; ++i) far = far && d[i][j] > t.negative;
    if (far) gt.points.unmatched_b.push_back(j);
  }

  const std::size_t nl = a.lines.size(), ml = b.lines.size();
  std::vector<std::vector<Geo>> lg(nl, std::vector<Geo>(ml));
  std::vector<std::vector<double>> lc(nl, std::vector<double>(ml, kInf));
  for (std::size_t i = 0; i < nl; ++i)
    for (std::size_t j = 0; j < ml; ++j) {
      const auto& la = a.lines[i];
      const auto& lb = b.lines[j];
      const Geo in_b = frame_geo(map(f, la.a), map(f, la.b), lb.a, lb.b);
      const Geo in_a = frame_geo(la.a, la.b, map(g, lb.a), map(g, lb.b));
      lg[i][j] = {std::max(in_a.d, in_b.d), std::min(in_a.o, in_b.o)};
      if (lg[i][j].d < t.line && lg[i][j].o > t.overlap) lc[i][j] = lg[i][j].d;
    }
  mutual(lc, gt.lines);
  auto near = [&](std::size_t i, std::size_t j) { return lg[i][j].d < t.negative && lg[i][j].o > 0; };
  for (std::size_t i = 0; i < nl; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < ml; ++j) any = any || near(i, j);
    if (!any) gt.lines.unmatched_a.push_back(i);
  }
  for (std::size_t j = 0; j < ml; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < nl; ++i) any = any || near(i, j);
    if (!any) gt.lines.unmatched_b.push_back(j);
  }
  return gt;
}

SynthConfig quiet_identity() {
  SynthConfig c;
  c.fixed_h = Homography::identity();
  c.noise_sigma = 0.0;
  c.spurious_points = 0;
  c.spurious_lines = 0;
  c.shuffle = false;
  c.seed = 3;
  return c;
}

// ---- ground truth -------------------------------------------------------------------

TEST(GroundTruth, IdenticalFramesPairEveryFeatureWithItself) {
  std::mt19937_64 rng(1);
  auto f = testing::random_features(30, 8, 4, rng);
  auto gt = gt_from_homography(f, f, Homography::identity());
  ASSERT_EQ(gt.points.positives.size(), 30u);
  for (auto [i, j] : gt.points.positives) EXPECT_EQ(i, j);
  ASSERT_EQ(gt.lines.positives.size(), 8u);
  for (auto [i, j] : gt.lines.positives) EXPECT_EQ(i, j);
  EXPECT_TRUE(gt.points.unmatched_a.empty());
  EXPECT_TRUE(gt.points.unmatched_b.empty());
  EXPECT_TRUE(gt.lines.unmatched_a.empty());
  EXPECT_TRUE(gt.lines.unmatched_b.empty());
}

TEST(GroundTruth, PointThresholdIsStrict) {
  FeatureSet a, b;
  a.width = b.width = 100;
  a.height = b.height = 100;
  a.keypoints = {{{10, 10}, {0.0f}}, {{50, 50}, {0.0f}}, {{80, 20}, {0.0f}}};
  b.keypoints = {{{13, 10}, {0.0f}}, {{52.9, 50}, {0.0f}}, {{88, 20}, {0.0f}}};
  auto gt = gt_from_homography(a, b, Homography::identity());
  EXPECT_EQ(gt.points.positives, (std::vector<IndexPair>{{1, 1}}));
  // Exactly at the negative threshold is not yet unmatchable.
  EXPECT_TRUE(gt.points.unmatched_a.empty());
  b.keypoints[2].pos.x = 88.5;
  gt = gt_from_homography(a, b, Homography::identity());
  EXPECT_EQ(gt.points.unmatched_a, (std::vector<std::size_t>{2}));
  EXPECT_EQ(gt.points.unmatched_b, (std::vector<std::size_t>{2}));
}

TEST(GroundTruth, LineDistanceAndOverlapRules) {
  FeatureSet a, b;
  a.width = b.width = 400;
  a.height = b.height = 400;
  auto line = [](Vec2 p, Vec2 q) { return LineSegment{p, q, {0.0f}, {0.0f}}; };
  a.lines = {line({10, 10}, {110, 10}), line({10, 100}, {110, 100}), line({10, 200}, {110, 200}),
             line({10, 300}, {110, 300})};
  b.lines = {line({110, 14}, {10, 14}),    // 4 px off, reversed: positive
             line({10, 106}, {110, 106}),  // 6 px off: neither
             line({10, 209}, {110, 209}),  // 9 px off: unmatchable
             line({80, 300}, {180, 300})}; // collinear, 30% overlap: neither
  auto gt = gt_from_homography(a, b, Homography::identity());
  EXPECT_EQ(gt.lines.positives, (std::vector<IndexPair>{{0, 0}}));
  EXPECT_EQ(gt.lines.unmatched_a, (std::vector<std::size_t>{2}));
  EXPECT_EQ(gt.lines.unmatched_b, (std::vector<std::size_t>{2}));
  const auto g = line_geometry(a.lines[3], b.lines[3], Homography::identity(), Homography::identity());
  EXPECT_NEAR(g.distance, 0.0, 1e-12);
  EXPECT_NEAR(g.overlap, 0.3, 1e-12);
}

TEST(GroundTruth, MatchesExhaustiveOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SynthConfig c;
    c.seed = seed;
    c.points = 60;
    c.lines = 20;
    c.max_translation = 40;
    c.max_perspective = 5e-4;
    const auto s = synth_pair(c);
    // Jitter B so the thresholds are exercised, not only exact copies.
    FeatureSet b = s.b;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 3.0);
    for (auto& k : b.keypoints) k.pos = {k.pos.x + n(rng), k.pos.y + n(rng)};
    for (auto& l : b.lines) {
      l.a = {l.a.x + n(rng), l.a.y + n(rng)};
      l.b = {l.b.x + n(rng), l.b.y + n(rng)};
    }
    EXPECT_EQ(gt_from_homography(s.a, b, s.h), oracle_gt(s.a, b, s.h, c.thresholds)) << seed;
    EXPECT_EQ(s.gt, oracle_gt(s.a, s.b, s.h, c.thresholds)) << seed;
  }
}

TEST(GroundTruth, SwappingImagesTransposes) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig c;
    c.seed = 50 + seed;
    const auto s = synth_pair(c);
    const auto fwd = s.gt;
    const auto back = gt_from_homography(s.b, s.a, s.h.inverse());
    auto flip = [](std::vector<IndexPair> v) {
      for (auto& p : v) std::swap(p.first, p.second);
      std::sort(v.begin(), v.end());
      return v;
    };
    EXPECT_EQ(flip(back.points.positives), fwd.points.positives);
    EXPECT_EQ(flip(back.lines.positives), fwd.lines.positives);
    EXPECT_EQ(back.points.unmatched_a, fwd.points.unmatched_b);
    EXPECT_EQ(back.points.unmatched_b, fwd.points.unmatched_a);
    EXPECT_EQ(back.lines.unmatched_a, fwd.lines.unmatched_b);
    EXPECT_EQ(back.lines.unmatched_b, fwd.lines.unmatched_a);
  }
}

TEST(GroundTruth, PositivesAndUnmatchablesAreDisjoint) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig c;
    c.seed = seed;
    const auto gt = synth_pair(c).gt;
    for (const auto* comp : {&gt.points, &gt.lines}) {
      std::vector<bool> used_a(1000), used_b(1000);
      for (auto [i, j] : comp->positives) {
        EXPECT_FALSE(used_a[i]);
        EXPECT_FALSE(used_b[j]);
        used_a[i] = used_b[j] = true;
      }
      for (auto i : comp->unmatched_a) EXPECT_FALSE(used_a[i]);
      for (auto j : comp->unmatched_b) EXPECT_FALSE(used_b[j]);
    }
  }
}

TEST(GroundTruth, RejectsMisorderedThresholds) {
  GtThresholds t;
  t.negative = 2.0;
  FeatureSet f;
  EXPECT_THROW(gt_from_homography(f, f, Homography::identity(), t), DataError);
}

// ---- synthetic pairs ----------------------------------------------------------------

TEST(Synth, IdentityWithoutNoiseCopiesEveryFeature) {
  const auto s = synth_pair(quiet_identity());
  EXPECT_EQ(s.a, s.b);
  ASSERT_EQ(s.gt.points.positives.size(), s.a.keypoints.size());
  for (auto [i, j] : s.gt.points.positives) EXPECT_EQ(i, j);
  ASSERT_EQ(s.gt.lines.positives.size(), s.a.lines.size());
  for (auto [i, j] : s.gt.lines.positives) EXPECT_EQ(i, j);
}

TEST(Synth, TranslationBeyondTheImageLeavesNothingMatchable) {
  auto c = quiet_identity();
  c.fixed_h = Homography::translation(1000, 0);
  c.spurious_points = 7;
  c.spurious_lines = 3;
  const auto s = synth_pair(c);
  EXPECT_EQ(s.b.keypoints.size(), 7u);
  EXPECT_EQ(s.b.lines.size(), 3u);
  EXPECT_TRUE(s.gt.points.positives.empty());
  EXPECT_TRUE(s.gt.lines.positives.empty());
  EXPECT_EQ(s.gt.points.unmatched_a.size(), c.points);
  EXPECT_EQ(s.gt.lines.unmatched_a.size(), c.lines);
}

TEST(Synth, SameSeedSameOutput) {
  SynthConfig c;
  c.seed = 77;
  const auto x = synth_pair(c), y = synth_pair(c);
  EXPECT_EQ(x.a, y.a);
  EXPECT_EQ(x.b, y.b);
  EXPECT_EQ(x.gt, y.gt);
  EXPECT_TRUE(x.h == y.h);
  c.seed = 78;
  EXPECT_FALSE(synth_pair(c).a == x.a);
}

TEST(Synth, FeaturesStayInsideTheImage) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig c;
    c.seed = seed;
    const auto s = synth_pair(c);
    EXPECT_NO_THROW(s.a.validate());
    EXPECT_NO_THROW(s.b.validate());
    EXPECT_EQ(s.b.descriptor_dim(), c.descriptor_dim);
    EXPECT_LE(s.b.keypoints.size(), c.points + c.spurious_points);
  }
}

TEST(Synth, RejectsDegenerateFixedHomographyAndBadConfig) {
  auto c = quiet_identity();
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = 0.0;
  m(1, 1) = 0.0;
  c.fixed_h = Homography(m);
  EXPECT_THROW(synth_pair(c), Error);
  SynthConfig bad;
  bad.margin = 500;
  EXPECT_THROW(synth_pair(bad), DataError);
}

// ---- losses -------------------------------------------------------------------------

Var<double> layer_loss_of(Tape<double>& t, const TensorD& s, const TensorD& ma, const TensorD& mb,
                          const GtComponent& gt) {
  return layer_loss(t.constant(s), t.constant(ma), t.constant(mb), gt);
}

TEST(LayerLoss, PerfectMatchCostsNothing) {
  Tape<double> t(false);
  GtComponent gt;
  gt.positives = {{0, 0}};
  EXPECT_EQ(layer_loss_of(t, TensorD({1, 1}, 1.0), TensorD({1, 1}, 0.3), TensorD({1, 1}, 0.3), gt)
                .value()
                .item(),
            0.0);
}

TEST(LayerLoss, ZeroMatchabilityOnUnmatchedCostsNothing) {
  Tape<double> t(false);
  GtComponent gt;
  gt.unmatched_a = {0, 1};
  gt.unmatched_b = {2};
  EXPECT_EQ(layer_loss_of(t, TensorD({2, 3}, 0.2), TensorD({2, 1}, 0.0), TensorD({3, 1}, 0.0), gt)
                .value()
                .item(),
            0.0);
}

TEST(LayerLoss, ClampsZeroProbabilities) {
  Tape<double> t(false);
  GtComponent gt;
  gt.positives = {{0, 0}};
  const double v =
      layer_loss_of(t, TensorD({1, 1}, 0.0), TensorD({1, 1}, 0.5), TensorD({1, 1}, 0.5), gt)
          .value()
          .item();
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(LayerLoss, MatchesDirectSummation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + trial % 3, m = 5 + trial % 4;
    TensorD s({n, m}), ma({n, 1}), mb({m, 1});
    for (auto* t : {&s, &ma, &mb})
      for (auto& v : t->data()) v = u(rng);
    GtComponent gt;
    gt.positives = {{0, 1}, {2, 0}, {n - 1, m - 1}};
    if (trial % 2) gt.positives.pop_back();
    gt.unmatched_a = {1};
    gt.unmatched_b = {2, 3};
    if (trial % 3 == 0) gt.unmatched_b.clear();

    double pos = 0.0, ra = 0.0, rb = 0.0;
    for (auto [i, j] : gt.positives) pos += std::log(s(i, j));
    for (auto i : gt.unmatched_a) ra += std::log(1 - ma(i, 0));
    for (auto j : gt.unmatched_b) rb += std::log(1 - mb(j, 0));
    double ref = -pos / double(gt.positives.size()) - ra / (2.0 * double(gt.unmatched_a.size()));
    if (!gt.unmatched_b.empty()) ref -= rb / (2.0 * double(gt.unmatched_b.size()));

    Tape<double> t(false);
    const double v = layer_loss_of(t, s, ma, mb, gt).value().item();
    EXPECT_NEAR(v, ref, 1e-6);
    EXPECT_GE(v, 0.0);
  }
}

TEST(TotalLoss, AveragesOverLayersAndTypes) {
  EXPECT_DOUBLE_EQ(total_loss({2.5, 2.5, 2.5}, {2.5, 2.5, 2.5}, 3), 2.5);
  EXPECT_DOUBLE_EQ(total_loss({1.0}, {4.0}, 1), 2.5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<double> p(4), l(4);
  double hand = 0.0;
  for (int k = 0; k < 4; ++k) {
    p[k] = u(rng);
    l[k] = u(rng);
    hand += p[k] + l[k];
  }
  EXPECT_NEAR(total_loss(p, l, 4), hand / 8.0, 1e-15);

  Tape<double> t(false);
  std::vector<Var<double>> vp, vl;
  for (int k = 0; k < 4; ++k) {
    vp.push_back(t.constant(TensorD::scalar(p[k])));
    vl.push_back(t.constant(TensorD::scalar(l[k])));
  }
  EXPECT_NEAR(total_loss(vp, vl, 4).value().item(), hand / 8.0, 1e-15);
  vl.pop_back();
  EXPECT_THROW(total_loss(vp, vl, 4), DataError);
  EXPECT_THROW(total_loss({1.0}, {1.0}, 2), DataError);
}

// ---- training -----------------------------------------------------------------------

TrainingPair toy_pair(std::uint64_t seed, std::size_t points = 6, std::size_t lines = 3) {
  SynthConfig c;
  c.seed = seed;
  c.points = points;
  c.lines = lines;
  c.descriptor_dim = 8;
  c.spurious_points = 1;
  c.spurious_lines = 1;
  auto s = synth_pair(c);
  return {prepare_pair(s.a, s.b), s.gt};
}

TEST(ComputeLoss, BreakdownIsConsistent) {
  const auto tp = toy_pair(1);
  const auto params = init_model(testing::small_config(3), 2).cast<double>();
  Tape<double> tape(false);
  LossBreakdown br;
  auto loss = compute_loss(tape, bind_params(tape, params), params.config, tp.pair, tp.gt, &br);
  ASSERT_EQ(br.point.size(), 3u);
  ASSERT_EQ(br.line.size(), 3u);
  EXPECT_NEAR(br.total, total_loss(br.point, br.line, 3), 1e-12);
  EXPECT_EQ(br.total, loss.value().item());
}

TEST(TrainTiny, ZeroLearningRateKeepsTheLossConstant) {
  auto params = init_model(testing::small_config(2), 3);
  const auto before = params.flatten();
  auto r = train_tiny(params, {toy_pair(3)}, 5, 0.0);
  ASSERT_EQ(r.losses.size(), 5u);
  for (double l : r.losses) EXPECT_EQ(l, r.losses[0]);
  EXPECT_EQ(r.final_loss, r.losses[0]);
  const auto after = params.flatten();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bit_equal(before[i], after[i]));
}

TEST(TrainTiny, IsDeterministicAndDescends) {
  auto p1 = init_model(testing::small_config(2), 4), p2 = p1;
  const std::vector<TrainingPair> pairs = {toy_pair(4)};
  auto r1 = train_tiny(p1, pairs, 30, 0.01);
  auto r2 = train_tiny(p2, pairs, 30, 0.01);
  EXPECT_EQ(r1.losses, r2.losses);
  const auto f1 = p1.flatten(), f2 = p2.flatten();
  for (std::size_t i = 0; i < f1.size(); ++i) EXPECT_TRUE(bit_equal(f1[i], f2[i]));
  EXPECT_LT(r1.final_loss, r1.losses.front());
}

TEST(TrainTiny, NonFiniteLossNamesTheStep) {
  auto params = init_model(testing::small_config(2), 5);
  params.tree.heads.point_proj.weight[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_tiny(params, {toy_pair(5)}, 3, 0.01);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train_tiny(params, {}, 3, 0.01), DataError);
}

TEST(TrainTiny, GradientAtStartPassesFiniteDifferences) {
  const auto tp = toy_pair(6, 4, 2);
  const auto params = init_model(testing::small_config(1), 6);
  EXPECT_LT(loss_grad_check(params, tp.pair, tp.gt).max_error, 1e-4);
}

}  // namespace
}  // namespace plg
