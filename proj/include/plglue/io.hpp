#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plglue/assignment.hpp"
#include "plglue/geometry.hpp"
#include "plglue/matcher.hpp"
#include "plglue/model.hpp"
#include "plglue/supervision.hpp"

namespace plg::io {

using Json = nlohmann::json;

// ---- plain files ---------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);

// ---- features ------------------------------------------------------------
//
// {
//   "image_size": [w, h],
//   "descriptor_dim": d,
//   "keypoints": [{"xy": [x, y], "desc": [...]}, ...],
//   "lines": [{"endpoints": [[x, y], [x, y]], "desc": [[...], [...]]}, ...]
// }

Json features_to_json(const FeatureSet& f);
/// Validates every invariant; errors name the field and index.
FeatureSet features_from_json(const Json& j);
FeatureSet load_features(const std::string& path);
void save_features(const std::string& path, const FeatureSet& f);

// ---- weights -------------------------------------------------------------
//
// "LGSW" | uint64 LE manifest size | manifest JSON | float32 LE blob
//
// The manifest holds format_version, the architecture config, blob_bytes
// and one {name, shape, offset} entry per tensor (offset in bytes into the
// blob).

inline constexpr int kWeightFormatVersion = 1;

std::string weights_to_bytes(const ModelParams& params);
ModelParams weights_from_bytes(const std::string& bytes);
void save_weights(const std::string& path, const ModelParams& params);
ModelParams load_weights(const std::string& path);

/// Value of PLG_WEIGHTS, if set and non-empty.
std::optional<std::string> default_weights_path();

// ---- configs -------------------------------------------------------------

Json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json synth_config_to_json(const SynthConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const Json& j);

/// Everything needed to reproduce a tiny training run.
struct TrainConfig {
  ModelConfig model;
  SynthConfig synth;
  std::uint64_t init_seed = 0;
  std::size_t steps = 200;
  double learning_rate = 0.05;
  double tau = kDefaultMatchThreshold;
};

TrainConfig train_config_from_json(const Json& j);
TrainConfig load_train_config(const std::string& path);

// ---- ground truth, homographies, matches ---------------------------------

Json homography_to_json(const Homography& h);
Homography homography_from_json(const Json& j);

Json gt_to_json(const GroundTruth& gt);
GroundTruth gt_from_json(const Json& j);

Json matches_to_json(const MatchSet& m, const FeatureSet* a = nullptr,
                     const FeatureSet* b = nullptr, const MatchTimings* timings = nullptr);
MatchSet matches_from_json(const Json& j);

}  // namespace plg::io
