#include "plglue/io.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace plg::io {
namespace {

constexpr char kMagic[4] = {'L', 'G', 'S', 'W'};

[[noreturn]] void fail(const std::string& what) { throw DataError(what); }

template <class F>
auto guarded(const std::string& context, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    fail(context + ": " + e.what());
  }
}

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) fail(where + ": missing field '" + key + "'");
  return j.at(key);
}

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) fail(where + ": expected a number");
  return j.get<double>();
}

Vec2 point(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) fail(where + ": expected [x, y]");
  return {number(j[0], where + "[0]"), number(j[1], where + "[1]")};
}

std::vector<float> descriptor(const Json& j, std::size_t dim, const std::string& where) {
  if (!j.is_array()) fail(where + ": expected an array");
  if (j.size() != dim) {
    fail(where + ": length " + std::to_string(j.size()) + " differs from descriptor_dim " +
         std::to_string(dim));
  }
  std::vector<float> d;
  d.reserve(dim);
  for (std::size_t k = 0; k < dim; ++k) {
    d.push_back(static_cast<float>(number(j[k], where + "[" + std::to_string(k) + "]")));
  }
  return d;
}

Json xy(Vec2 p) { return Json::array({p.x, p.y}); }

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::size_t index_value(const Json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    fail(where + ": expected a non-negative integer");
  }
  return j.get<std::size_t>();
}

Json component_to_json(const GtComponent& c) {
  Json pos = Json::array();
  for (auto [i, j] : c.positives) pos.push_back(Json::array({i, j}));
  return {{"positives", pos}, {"unmatched_a", c.unmatched_a}, {"unmatched_b", c.unmatched_b}};
}

GtComponent component_from_json(const Json& j, const std::string& where) {
  GtComponent c;
  const auto& pos = field(j, "positives", where);
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const std::string w = where + ".positives[" + std::to_string(k) + "]";
    if (!pos[k].is_array() || pos[k].size() != 2) fail(w + ": expected [i, j]");
    c.positives.emplace_back(index_value(pos[k][0], w), index_value(pos[k][1], w));
  }
  for (const auto* key : {"unmatched_a", "unmatched_b"}) {
    const auto& arr = field(j, key, where);
    auto& dst = std::string(key) == "unmatched_a" ? c.unmatched_a : c.unmatched_b;
    for (std::size_t k = 0; k < arr.size(); ++k) {
      dst.push_back(index_value(arr[k], where + "." + key + "[" + std::to_string(k) + "]"));
    }
  }
  return c;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '" + path + "'");
  out << contents;
  if (!out) fail("write to '" + path + "' failed");
}

Json read_json(const std::string& path) {
  const std::string text = read_file(path);
  return guarded(path, [&] { return Json::parse(text); });
}

void write_json(const std::string& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

// ---- features ------------------------------------------------------------

Json features_to_json(const FeatureSet& f) {
  Json kps = Json::array();
  for (const auto& kp : f.keypoints) kps.push_back({{"xy", xy(kp.pos)}, {"desc", kp.desc}});
  Json lines = Json::array();
  for (const auto& l : f.lines) {
    lines.push_back({{"endpoints", Json::array({xy(l.a), xy(l.b)})},
                     {"desc", Json::array({l.desc_a, l.desc_b})}});
  }
  return {{"image_size", Json::array({f.width, f.height})},
          {"descriptor_dim", f.descriptor_dim()},
          {"keypoints", kps},
          {"lines", lines}};
}

FeatureSet features_from_json(const Json& j) {
  return guarded("features", [&] {
    FeatureSet f;
    const Vec2 size = point(field(j, "image_size", "features"), "image_size");
    f.width = size.x;
    f.height = size.y;
    const std::size_t dim = index_value(field(j, "descriptor_dim", "features"), "descriptor_dim");

    const auto& kps = field(j, "keypoints", "features");
    if (!kps.is_array()) fail("keypoints: expected an array");
    for (std::size_t i = 0; i < kps.size(); ++i) {
      const std::string w = "keypoints[" + std::to_string(i) + "]";
      f.keypoints.push_back({point(field(kps[i], "xy", w), w + ".xy"),
                             descriptor(field(kps[i], "desc", w), dim, w + ".desc")});
    }
    const auto& lines = field(j, "lines", "features");
    if (!lines.is_array()) fail("lines: expected an array");
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string w = "lines[" + std::to_string(i) + "]";
      const auto& ends = field(lines[i], "endpoints", w);
      const auto& desc = field(lines[i], "desc", w);
      if (!ends.is_array() || ends.size() != 2) fail(w + ".endpoints: expected two points");
      if (!desc.is_array() || desc.size() != 2) fail(w + ".desc: expected two descriptors");
      f.lines.push_back({point(ends[0], w + ".endpoints[0]"), point(ends[1], w + ".endpoints[1]"),
                         descriptor(desc[0], dim, w + ".desc[0]"),
                         descriptor(desc[1], dim, w + ".desc[1]")});
    }
    f.validate();
    return f;
  });
}

FeatureSet load_features(const std::string& path) {
  const Json j = read_json(path);
  try {
    return features_from_json(j);
  } catch (const DataError& e) {
    fail(path + ": " + e.what());
  }
}

void save_features(const std::string& path, const FeatureSet& f) {
  f.validate();
  write_json(path, features_to_json(f));
}

// ---- weights -------------------------------------------------------------

std::string weights_to_bytes(const ModelParams& params) {
  const auto names = params.names();
  const auto tensors = params.flatten();
  Json entries = Json::array();
  std::uint64_t offset = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    entries.push_back({{"name", names[k]}, {"shape", tensors[k].shape()}, {"offset", offset}});
    offset += 4 * tensors[k].size();
  }
  const Json manifest = {{"format_version", kWeightFormatVersion},
                         {"config", model_config_to_json(params.config)},
                         {"blob_bytes", offset},
                         {"entries", entries}};
  const std::string text = manifest.dump();
  std::string out(kMagic, 4);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : tensors)
    for (float v : t.data()) put_f32(out, v);
  return out;
}

ModelParams weights_from_bytes(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail("weights: not a weight container (bad magic)");
  }
  const std::uint64_t manifest_size = get_u64(bytes, 4);
  if (manifest_size > bytes.size() - 12) fail("weights: manifest extends past the end of the file");
  const std::string text = bytes.substr(12, manifest_size);
  const Json manifest = guarded("weights manifest", [&] { return Json::parse(text); });
  const std::size_t blob_start = 12 + manifest_size;
  const std::size_t blob_size = bytes.size() - blob_start;

  return guarded("weights manifest", [&] {
    const auto& version = field(manifest, "format_version", "weights");
    if (!version.is_number_integer() || version.get<int>() != kWeightFormatVersion) {
      fail("weights: unsupported format_version " + version.dump());
    }
    const ModelConfig config = model_config_from_json(field(manifest, "config", "weights"));
    const std::size_t blob_bytes = index_value(field(manifest, "blob_bytes", "weights"), "blob_bytes");
    if (blob_bytes != blob_size) {
      fail("weights: blob_bytes " + std::to_string(blob_bytes) + " but " +
           std::to_string(blob_size) + " bytes follow the manifest");
    }

    std::map<std::string, Shape> expected;
    const auto shapes = param_shapes(config);
    visit_tree(shapes,
               [&](const std::string& name, const Shape& s) { expected[name] = s; });

    std::map<std::string, Tensor> loaded;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t total = 0;
    const auto& entries = field(manifest, "entries", "weights");
    if (!entries.is_array()) fail("weights: entries must be an array");
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const std::string w = "weights.entries[" + std::to_string(k) + "]";
      const auto name = field(entries[k], "name", w).get<std::string>();
      auto it = expected.find(name);
      if (it == expected.end()) fail(w + ": unknown entry name '" + name + "'");
      if (loaded.count(name)) fail(w + ": duplicate entry '" + name + "'");
      const Shape shape = field(entries[k], "shape", w).get<Shape>();
      if (shape != it->second) {
        fail(w + ": '" + name + "' has shape " + shape_str(shape) + ", expected " +
             shape_str(it->second));
      }
      const std::size_t offset = index_value(field(entries[k], "offset", w), w + ".offset");
      const std::size_t n = shape_numel(shape);
      if (offset % 4 != 0 || offset > blob_size || 4 * n > blob_size - offset) {
        fail(w + ": '" + name + "' lies outside the blob");
      }
      Tensor t(shape);
      for (std::size_t e = 0; e < n; ++e) t[e] = get_f32(bytes, blob_start + offset + 4 * e);
      loaded.emplace(name, std::move(t));
      ranges.emplace_back(offset, offset + 4 * n);
      total += 4 * n;
    }
    for (const auto& [name, shape] : expected) {
      if (!loaded.count(name)) fail("weights: missing entry '" + name + "'");
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t k = 1; k < ranges.size(); ++k) {
      if (ranges[k].first < ranges[k - 1].second) fail("weights: overlapping entries");
    }
    if (total != blob_size) fail("weights: entries do not cover the blob exactly");

    ModelParams params;
    params.config = config;
    params.tree = map_tree<Tensor>(param_shapes(config), [&](const std::string& name, const Shape&) {
      return loaded.at(name);
    });
    return params;
  });
}

void save_weights(const std::string& path, const ModelParams& params) {
  write_file(path, weights_to_bytes(params));
}

ModelParams load_weights(const std::string& path) {
  try {
    return weights_from_bytes(read_file(path));
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.rfind("cannot open", 0) == 0) throw;
    fail(path + ": " + msg);
  }
}

std::optional<std::string> default_weights_path() {
  const char* v = std::getenv("PLG_WEIGHTS");
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

// ---- configs -------------------------------------------------------------

Json model_config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers}, {"dim", c.dim}, {"head_dim", c.head_dim}, {"heads", c.heads}};
}

ModelConfig model_config_from_json(const Json& j) {
  return guarded("model config", [&] {
    ModelConfig c;
    if (!j.is_object()) fail("model config: expected an object");
    for (const auto& [key, value] : j.items()) {
      if (key == "layers") c.layers = index_value(value, key);
      else if (key == "dim") c.dim = index_value(value, key);
      else if (key == "head_dim") c.head_dim = index_value(value, key);
      else if (key == "heads") c.heads = index_value(value, key);
      else fail("model config: unknown key '" + key + "'");
    }
    try {
      c.validate();
    } catch (const Error& e) {
      fail(std::string("model config: ") + e.what());
    }
    return c;
  });
}

Json synth_config_to_json(const SynthConfig& c) {
  Json j = {{"points", c.points},
            {"lines", c.lines},
            {"width", c.width},
            {"height", c.height},
            {"descriptor_dim", c.descriptor_dim},
            {"max_rotation_deg", c.max_rotation_deg},
            {"max_translation", c.max_translation},
            {"min_scale", c.min_scale},
            {"max_scale", c.max_scale},
            {"max_perspective", c.max_perspective},
            {"noise_sigma", c.noise_sigma},
            {"junction_fraction", c.junction_fraction},
            {"min_line_length", c.min_line_length},
            {"margin", c.margin},
            {"spurious_points", c.spurious_points},
            {"spurious_lines", c.spurious_lines},
            {"shuffle", c.shuffle},
            {"eps_point", c.thresholds.point},
            {"eps_negative", c.thresholds.negative},
            {"eps_line", c.thresholds.line},
            {"min_overlap", c.thresholds.overlap},
            {"seed", c.seed}};
  if (c.fixed_h) j["fixed_h"] = homography_to_json(*c.fixed_h);
  return j;
}

SynthConfig synth_config_from_json(const Json& j) {
  return guarded("synth config", [&] {
    if (!j.is_object()) fail("synth config: expected an object");
    SynthConfig c;
    std::map<std::string, double*> reals = {
        {"width", &c.width},
        {"height", &c.height},
        {"max_rotation_deg", &c.max_rotation_deg},
        {"max_translation", &c.max_translation},
        {"min_scale", &c.min_scale},
        {"max_scale", &c.max_scale},
        {"max_perspective", &c.max_perspective},
        {"noise_sigma", &c.noise_sigma},
        {"junction_fraction", &c.junction_fraction},
        {"min_line_length", &c.min_line_length},
        {"margin", &c.margin},
        {"eps_point", &c.thresholds.point},
        {"eps_negative", &c.thresholds.negative},
        {"eps_line", &c.thresholds.line},
        {"min_overlap", &c.thresholds.overlap}};
    std::map<std::string, std::size_t*> counts = {{"points", &c.points},
                                                  {"lines", &c.lines},
                                                  {"descriptor_dim", &c.descriptor_dim},
                                                  {"spurious_points", &c.spurious_points},
                                                  {"spurious_lines", &c.spurious_lines}};
    for (const auto& [key, value] : j.items()) {
      if (auto r = reals.find(key); r != reals.end()) {
        *r->second = number(value, "synth." + key);
      } else if (auto n = counts.find(key); n != counts.end()) {
        *n->second = index_value(value, "synth." + key);
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "shuffle") {
        c.shuffle = value.get<bool>();
      } else if (key == "fixed_h") {
        c.fixed_h = homography_from_json(value);
      } else {
        fail("synth config: unknown key '" + key + "'");
      }
    }
    c.validate();
    return c;
  });
}

TrainConfig train_config_from_json(const Json& j) {
  return guarded("train config", [&] {
    if (!j.is_object()) fail("train config: expected an object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key == "model") c.model = model_config_from_json(value);
      else if (key == "synth") c.synth = synth_config_from_json(value);
      else if (key == "init_seed") c.init_seed = value.get<std::uint64_t>();
      else if (key == "steps") c.steps = index_value(value, key);
      else if (key == "learning_rate") c.learning_rate = number(value, key);
      else if (key == "tau") c.tau = number(value, key);
      else fail("train config: unknown key '" + key + "'");
    }
    if (c.synth.descriptor_dim != c.model.dim) {
      fail("train config: synth.descriptor_dim must equal model.dim");
    }
    return c;
  });
}

TrainConfig load_train_config(const std::string& path) {
  const Json j = read_json(path);
  try {
    return train_config_from_json(j);
  } catch (const DataError& e) {
    fail(path + ": " + e.what());
  }
}

// ---- ground truth, homographies, matches ---------------------------------

Json homography_to_json(const Homography& h) {
  Json rows = Json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(Json::array({h(r, 0), h(r, 1), h(r, 2)}));
  return rows;
}

Homography homography_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) fail("homography: expected a 3x3 array");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) fail("homography: expected a 3x3 array");
    for (int c = 0; c < 3; ++c) {
      m(r, c) = number(j[r][c], "homography[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    }
  }
  try {
    return Homography(m);
  } catch (const NumericError& e) {
    fail(std::string("homography: ") + e.what());
  }
}

Json gt_to_json(const GroundTruth& gt) {
  return {{"points", component_to_json(gt.points)}, {"lines", component_to_json(gt.lines)}};
}

GroundTruth gt_from_json(const Json& j) {
  return guarded("ground truth", [&] {
    return GroundTruth{component_from_json(field(j, "points", "gt"), "gt.points"),
                       component_from_json(field(j, "lines", "gt"), "gt.lines")};
  });
}

Json matches_to_json(const MatchSet& m, const FeatureSet* a, const FeatureSet* b,
                     const MatchTimings* timings) {
  Json points = Json::array();
  for (const auto& p : m.points) {
    Json e = {{"i", p.i}, {"j", p.j}, {"score", p.score}};
    if (a && b) {
      e["xy_a"] = xy(a->keypoints.at(p.i).pos);
      e["xy_b"] = xy(b->keypoints.at(p.j).pos);
    }
    points.push_back(e);
  }
  Json lines = Json::array();
  for (const auto& l : m.lines) {
    lines.push_back({{"i", l.i}, {"j", l.j}, {"score", l.score}, {"swapped", l.swapped}});
  }
  Json out = {{"exit_layer", m.exit_layer}, {"points", points}, {"lines", lines}};
  if (timings) {
    out["timings_ms"] = {{"graph", timings->graph_ms},
                         {"backbone", timings->backbone_ms},
                         {"blocks", timings->block_ms},
                         {"assignment", timings->assignment_ms},
                         {"filter", timings->filter_ms},
                         {"total", timings->total_ms}};
  }
  return out;
}

MatchSet matches_from_json(const Json& j) {
  return guarded("matches", [&] {
    MatchSet m;
    m.exit_layer = index_value(field(j, "exit_layer", "matches"), "exit_layer");
    const auto& points = field(j, "points", "matches");
    for (std::size_t k = 0; k < points.size(); ++k) {
      const std::string w = "points[" + std::to_string(k) + "]";
      m.points.push_back({index_value(field(points[k], "i", w), w + ".i"),
                          index_value(field(points[k], "j", w), w + ".j"),
                          number(field(points[k], "score", w), w + ".score")});
    }
    const auto& lines = field(j, "lines", "matches");
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const std::string w = "lines[" + std::to_string(k) + "]";
      m.lines.push_back({index_value(field(lines[k], "i", w), w + ".i"),
                         index_value(field(lines[k], "j", w), w + ".j"),
                         number(field(lines[k], "score", w), w + ".score"),
                         field(lines[k], "swapped", w).get<bool>()});
    }
    return m;
  });
}

}  // namespace plg::io
