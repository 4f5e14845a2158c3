#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>

#include "plglue/io.hpp"
#include "test_util.hpp"

namespace plg {
namespace {

namespace fs = std::filesystem;
using io::Json;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("plglue_io_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

// ---- features ---------------------------------------------------------------------------

using Features = TempDir;

TEST_F(Features, FileRoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  auto f = testing::random_features(25, 7, 16, rng, 640, 480);
  f.keypoints[0].pos = {0.1 + 0.2, 1.0 / 3.0};  // values without short decimal forms
  f.lines[0].desc_a[0] = std::nextafter(1.0f, 2.0f);
  io::save_features(path("f.json"), f);
  const auto g = io::load_features(path("f.json"));
  EXPECT_EQ(f, g);
  EXPECT_EQ(g.keypoints[0].pos.x, 0.1 + 0.2);
}

TEST_F(Features, EmptySetIsValid) {
  FeatureSet f;
  f.width = 10;
  f.height = 20;
  io::save_features(path("e.json"), f);
  const auto g = io::load_features(path("e.json"));
  EXPECT_TRUE(g.keypoints.empty());
  EXPECT_TRUE(g.lines.empty());
  EXPECT_EQ(g.width, 10.0);
}

TEST(FeatureJson, DescriptorLengthErrorNamesTheKeypoint) {
  std::mt19937_64 rng(2);
  auto j = io::features_to_json(testing::random_features(5, 1, 4, rng));
  j["keypoints"][3]["desc"].push_back(0.5);
  try {
    io::features_from_json(j);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("keypoints[3]"), std::string::npos) << e.what();
  }
}

TEST(FeatureJson, RejectsMalformedDocuments) {
  std::mt19937_64 rng(3);
  const auto good = io::features_to_json(testing::random_features(2, 2, 4, rng, 100, 100));
  auto out_of_bounds = good;
  out_of_bounds["lines"][1]["endpoints"][0] = {150.0, 5.0};
  EXPECT_THROW(io::features_from_json(out_of_bounds), DataError);
  auto missing = good;
  missing.erase("descriptor_dim");
  EXPECT_THROW(io::features_from_json(missing), DataError);
  auto wrong_type = good;
  wrong_type["keypoints"][0]["xy"] = "here";
  EXPECT_THROW(io::features_from_json(wrong_type), DataError);
  auto one_end = good;
  one_end["lines"][0]["endpoints"].erase(1);
  EXPECT_THROW(io::features_from_json(one_end), DataError);
}

TEST_F(Features, BadJsonAndMissingFilesAreDataErrors) {
  io::write_file(path("bad.json"), "{\"image_size\": [1, ");
  EXPECT_THROW(io::load_features(path("bad.json")), DataError);
  EXPECT_THROW(io::load_features(path("absent.json")), DataError);
}

// ---- weights -----------------------------------------------------------------------------

std::string repack(const std::string& bytes, const std::function<void(Json&)>& edit,
                   std::size_t blob_delta = 0) {
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 4, 8);
  Json manifest = Json::parse(bytes.substr(12, n));
  edit(manifest);
  const std::string text = manifest.dump();
  std::string out = bytes.substr(0, 4);
  const std::uint64_t m = text.size();
  out.append(reinterpret_cast<const char*>(&m), 8);
  out += text;
  out += bytes.substr(12 + n);
  out.append(blob_delta, '\0');
  return out;
}

using Weights = TempDir;

TEST_F(Weights, RoundTripIsBitExact) {
  auto p = testing::random_params<float>({2, 8, 4, 2}, 3, 2.0);
  p.tree.heads.point_match.bias[0] = -0.0f;
  io::save_weights(path("w.bin"), p);
  const auto q = io::load_weights(path("w.bin"));
  EXPECT_EQ(q.config, p.config);
  const auto a = p.flatten(), b = q.flatten();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i], b[i])) << p.names()[i];
  EXPECT_EQ(io::weights_to_bytes(q), io::read_file(path("w.bin")));
}

TEST(WeightBytes, HeaderLayout) {
  const auto bytes = io::weights_to_bytes(init_model({1, 4, 2, 2}, 0));
  EXPECT_EQ(bytes.substr(0, 4), "LGSW");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 4, 8);
  const auto manifest = Json::parse(bytes.substr(12, n));
  EXPECT_EQ(manifest["format_version"], 1);
  EXPECT_EQ(manifest["blob_bytes"].get<std::size_t>(), bytes.size() - 12 - n);
  EXPECT_EQ(manifest["blob_bytes"].get<std::size_t>(), 4 * init_model({1, 4, 2, 2}, 0).count());
}

TEST(WeightBytes, RejectsCorruptContainers) {
  const auto bytes = io::weights_to_bytes(init_model({2, 4, 2, 2}, 1));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::weights_from_bytes(bad_magic), DataError);
  EXPECT_THROW(io::weights_from_bytes(bytes.substr(0, 10)), DataError);
  EXPECT_THROW(io::weights_from_bytes(bytes.substr(0, bytes.size() - 4)), DataError);

  auto expect_rejected = [&](const std::function<void(Json&)>& edit, std::size_t delta = 0) {
    EXPECT_THROW(io::weights_from_bytes(repack(bytes, edit, delta)), DataError);
  };
  expect_rejected([](Json& m) { m["format_version"] = 2; });
  expect_rejected([](Json& m) { m["entries"][0]["name"] = "blocks.0.mystery.weight"; });
  expect_rejected([](Json& m) { m["entries"].erase(m["entries"].size() - 1); });
  expect_rejected([](Json& m) { m["entries"][1]["name"] = m["entries"][0]["name"]; });
  expect_rejected([](Json& m) { m["entries"][0]["shape"] = {1, 4}; });
  expect_rejected([](Json& m) { m["entries"][2]["offset"] = m["entries"][1]["offset"]; });
  expect_rejected([](Json& m) { m["entries"][0]["offset"] = m["blob_bytes"]; });
  expect_rejected([](Json&) {}, 4);
  expect_rejected([](Json& m) { m["config"]["dim"] = 6; });

  // Unmodified repacking is accepted.
  EXPECT_NO_THROW(io::weights_from_bytes(repack(bytes, [](Json&) {})));
}

TEST(WeightBytes, EntryOrderDoesNotMatter) {
  const auto p = testing::random_params<float>({1, 4, 2, 2}, 2);
  const auto bytes = io::weights_to_bytes(p);
  const auto q = io::weights_from_bytes(repack(bytes, [](Json& m) {
    std::reverse(m["entries"].begin(), m["entries"].end());
  }));
  const auto a = p.flatten(), b = q.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i], b[i]));
}

TEST(DefaultWeights, ReadsTheEnvironment) {
  ::unsetenv("PLG_WEIGHTS");
  EXPECT_FALSE(io::default_weights_path());
  ::setenv("PLG_WEIGHTS", "", 1);
  EXPECT_FALSE(io::default_weights_path());
  ::setenv("PLG_WEIGHTS", "/tmp/model.bin", 1);
  EXPECT_EQ(io::default_weights_path(), "/tmp/model.bin");
  ::unsetenv("PLG_WEIGHTS");
}

// ---- initialisation ---------------------------------------------------------------------

TEST(InitModel, SeededAndBounded) {
  const ModelConfig c{2, 16, 8, 2};
  const auto a = init_model(c, 9), b = init_model(c, 9), d = init_model(c, 10);
  const auto fa = a.flatten(), fb = b.flatten(), fd = d.flatten();
  const auto names = a.names();
  bool any_difference = false;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_TRUE(bit_equal(fa[i], fb[i])) << names[i];
    any_difference = any_difference || !bit_equal(fa[i], fd[i]);
    const auto& n = names[i];
    const auto& shape = fa[i].shape();
    for (float v : fa[i].data()) {
      if (n == "rotary.bases") {
        EXPECT_LE(std::abs(v), float(M_PI));
      } else if (n.ends_with(".weight")) {
        EXPECT_LE(std::abs(v), std::sqrt(6.0 / double(shape[0] + shape[1])));
      } else if (n.ends_with(".norm_gain")) {
        EXPECT_EQ(v, 1.0f);
      } else {
        EXPECT_EQ(v, 0.0f) << n;
      }
    }
  }
  EXPECT_TRUE(any_difference);
}

TEST(InitModel, RejectsInconsistentConfig) {
  EXPECT_THROW(init_model({2, 10, 4, 2}, 0), DataError);
  EXPECT_THROW(init_model({0, 8, 4, 2}, 0), DataError);
  EXPECT_THROW(init_model({1, 6, 3, 2}, 0), DataError);
}

TEST(InitModel, ParameterLayout) {
  const auto p = init_model({3, 8, 4, 2}, 0);
  EXPECT_EQ(p.tree.blocks.size(), 3u);
  EXPECT_EQ(p.tree.confidence.size(), 2u);
  EXPECT_EQ(p.tree.rotary.shape(), (Shape{2, 2}));
  EXPECT_EQ(p.tree.blocks[0].self.mlp.hidden.weight.shape(), (Shape{16, 16}));
  EXPECT_EQ(p.tree.blocks[0].self.mlp.out.weight.shape(), (Shape{8, 16}));
  EXPECT_EQ(p.tree.heads.line_match.weight.shape(), (Shape{1, 8}));
}

// ---- configs and records -----------------------------------------------------------------

TEST(ConfigJson, SynthRoundTripAndUnknownKeys) {
  SynthConfig c;
  c.points = 11;
  c.noise_sigma = 0.25;
  c.thresholds.line = 4.0;
  c.seed = 1234567890123ull;
  c.fixed_h = Homography::translation(3, -4);
  const auto back = io::synth_config_from_json(io::synth_config_to_json(c));
  EXPECT_EQ(back.points, 11u);
  EXPECT_EQ(back.noise_sigma, 0.25);
  EXPECT_EQ(back.thresholds.line, 4.0);
  EXPECT_EQ(back.seed, c.seed);
  ASSERT_TRUE(back.fixed_h);
  EXPECT_TRUE(*back.fixed_h == *c.fixed_h);

  auto j = io::synth_config_to_json(c);
  j["pointz"] = 3;
  EXPECT_THROW(io::synth_config_from_json(j), DataError);
  EXPECT_THROW(io::model_config_from_json(Json{{"layers", 2}, {"depth", 3}}), DataError);
}

TEST(ConfigJson, TrainConfigRequiresMatchingDescriptorWidth) {
  Json j = {{"model", {{"layers", 1}, {"dim", 8}, {"head_dim", 4}, {"heads", 2}}},
            {"synth", {{"descriptor_dim", 8}}},
            {"steps", 5}};
  const auto c = io::train_config_from_json(j);
  EXPECT_EQ(c.steps, 5u);
  EXPECT_EQ(c.model.dim, 8u);
  j["synth"]["descriptor_dim"] = 16;
  EXPECT_THROW(io::train_config_from_json(j), DataError);
}

TEST(ConfigJson, FrozenOverfitConfigLoads) {
  const auto c = io::load_train_config(std::string(PLG_SOURCE_DIR) + "/configs/overfit.json");
  EXPECT_EQ(c.steps, 200u);
  EXPECT_EQ(c.synth.descriptor_dim, c.model.dim);
}

TEST(RecordJson, GroundTruthHomographyAndMatchesRoundTrip) {
  SynthConfig sc;
  sc.seed = 4;
  const auto s = synth_pair(sc);
  EXPECT_EQ(io::gt_from_json(io::gt_to_json(s.gt)), s.gt);
  EXPECT_TRUE(io::homography_from_json(io::homography_to_json(s.h)) == s.h);
  EXPECT_THROW(io::homography_from_json(Json::array({1, 2, 3})), DataError);

  MatchSet m;
  m.points = {{0, 1, 0.75}, {2, 0, 1.0 / 3.0}};
  m.lines = {{1, 1, 0.5, true}};
  m.exit_layer = 4;
  EXPECT_EQ(io::matches_from_json(io::matches_to_json(m)), m);
  const auto with_xy = io::matches_to_json(m, &s.a, &s.b);
  EXPECT_EQ(with_xy["points"][0]["xy_a"][0].get<double>(), s.a.keypoints[0].pos.x);
}

}  // namespace
}  // namespace plg
