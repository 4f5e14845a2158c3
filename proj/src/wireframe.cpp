#include "plglue/wireframe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

namespace plg {
namespace {

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  // Keeps the smaller index as root so cluster ids follow input order.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

void check_dims(const FeatureSet& f, bool check_bounds) {
  const std::size_t dim = f.descriptor_dim();
  auto check_point = [&](Vec2 p, const std::string& what) {
    if (!finite(p)) throw DataError(what + ": non-finite position");
    if (check_bounds && (p.x < 0.0 || p.x > f.width || p.y < 0.0 || p.y > f.height)) {
      throw DataError(what + ": position (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                      ") outside the image");
    }
  };
  auto check_desc = [&](const std::vector<float>& d, const std::string& what) {
    if (d.size() != dim) {
      throw DataError(what + ": descriptor length " + std::to_string(d.size()) +
                      " != descriptor_dim " + std::to_string(dim));
    }
    for (float v : d) {
      if (!std::isfinite(v)) throw DataError(what + ": non-finite descriptor value");
    }
  };
  for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
    const std::string what = "keypoints[" + std::to_string(i) + "]";
    check_point(f.keypoints[i].pos, what);
    check_desc(f.keypoints[i].desc, what);
  }
  for (std::size_t i = 0; i < f.lines.size(); ++i) {
    const std::string what = "lines[" + std::to_string(i) + "]";
    check_point(f.lines[i].a, what + ".a");
    check_point(f.lines[i].b, what + ".b");
    check_desc(f.lines[i].desc_a, what + ".desc_a");
    check_desc(f.lines[i].desc_b, what + ".desc_b");
  }
}

}  // namespace

std::size_t FeatureSet::descriptor_dim() const {
  if (!keypoints.empty()) return keypoints.front().desc.size();
  if (!lines.empty()) return lines.front().desc_a.size();
  return 0;
}

void FeatureSet::validate() const {
  if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(width) || !std::isfinite(height)) {
    throw DataError("image_size: width and height must be positive");
  }
  check_dims(*this, true);
}

std::vector<std::size_t> WireframeGraph::keypoint_nodes() const {
  std::vector<std::size_t> out(num_keypoints);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::vector<std::size_t> WireframeGraph::endpoint_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t i = num_keypoints; i < nodes.size(); ++i) out.push_back(i);
  return out;
}

Tensor WireframeGraph::embeddings(std::size_t dim) const {
  Tensor x({nodes.size(), dim});
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].embedding.size() != dim) {
      throw DataError("wireframe: node " + std::to_string(i) + " has embedding size " +
                      std::to_string(nodes[i].embedding.size()) + ", model expects " +
                      std::to_string(dim));
    }
    std::copy(nodes[i].embedding.begin(), nodes[i].embedding.end(), x.data().begin() + i * dim);
  }
  return x;
}

WireframeGraph build_wireframe(const FeatureSet& features, double merge_radius) {
  if (!(merge_radius >= 0.0)) throw DataError("build_wireframe: merge_radius must be >= 0");
  check_dims(features, false);

  WireframeGraph g;
  g.descriptor_dim = features.descriptor_dim();
  g.num_keypoints = features.keypoints.size();
  for (const auto& kp : features.keypoints) g.nodes.push_back({kp.pos, kp.desc, NodeKind::kKeypoint});

  // Raw endpoints: line i owns endpoints 2i (a) and 2i+1 (b).
  const std::size_t ne = 2 * features.lines.size();
  std::vector<Vec2> pos(ne);
  std::vector<const std::vector<float>*> desc(ne);
  for (std::size_t i = 0; i < features.lines.size(); ++i) {
    pos[2 * i] = features.lines[i].a;
    pos[2 * i + 1] = features.lines[i].b;
    desc[2 * i] = &features.lines[i].desc_a;
    desc[2 * i + 1] = &features.lines[i].desc_b;
  }

  DisjointSet ds(ne);
  for (std::size_t i = 0; i < ne; ++i)
    for (std::size_t j = i + 1; j < ne; ++j)
      if (dist(pos[i], pos[j]) <= merge_radius) ds.unite(i, j);

  // Cluster means can end up within the radius of each other even when no
  // member pair is; merge those until stable.
  auto cluster_means = [&] {
    std::vector<Vec2> sum(ne);
    std::vector<std::size_t> count(ne, 0);
    for (std::size_t i = 0; i < ne; ++i) {
      const std::size_t r = ds.find(i);
      sum[r].x += pos[i].x;
      sum[r].y += pos[i].y;
      ++count[r];
    }
    std::vector<std::pair<std::size_t, Vec2>> out;
    for (std::size_t r = 0; r < ne; ++r)
      if (count[r]) out.push_back({r, {sum[r].x / double(count[r]), sum[r].y / double(count[r])}});
    return out;
  };
  for (bool changed = true; changed;) {
    changed = false;
    const auto means = cluster_means();
    for (std::size_t i = 0; i < means.size() && !changed; ++i)
      for (std::size_t j = i + 1; j < means.size() && !changed; ++j)
        if (dist(means[i].second, means[j].second) <= merge_radius) {
          ds.unite(means[i].first, means[j].first);
          changed = true;
        }
  }

  // Roots are the smallest member index, so iterating endpoints in order
  // creates nodes in order of first appearance.
  std::vector<std::size_t> node_of_root(ne, SIZE_MAX);
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ne; ++i) {
    const std::size_t r = ds.find(i);
    if (node_of_root[r] == SIZE_MAX) {
      node_of_root[r] = members.size();
      members.emplace_back();
    }
    members[node_of_root[r]].push_back(i);
  }
  for (auto& m : members) {
    std::stable_sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      if (pos[a].x != pos[b].x) return pos[a].x < pos[b].x;
      return pos[a].y < pos[b].y;
    });
    Vec2 p;
    std::vector<double> acc(g.descriptor_dim, 0.0);
    for (auto i : m) {
      p.x += pos[i].x;
      p.y += pos[i].y;
      for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += (*desc[i])[d];
    }
    const double n = double(m.size());
    p.x /= n;
    p.y /= n;
    std::vector<float> emb(acc.size());
    for (std::size_t d = 0; d < acc.size(); ++d) emb[d] = static_cast<float>(acc[d] / n);
    g.nodes.push_back({p, std::move(emb), NodeKind::kEndpoint});
  }

  g.adjacency.assign(g.nodes.size(), {});
  for (std::size_t i = 0; i < features.lines.size(); ++i) {
    const std::size_t a = g.num_keypoints + node_of_root[ds.find(2 * i)];
    const std::size_t b = g.num_keypoints + node_of_root[ds.find(2 * i + 1)];
    g.edges.push_back({a, b, i});
    if (a != b) {
      g.adjacency[a].push_back(b);
      g.adjacency[b].push_back(a);
    }
  }
  for (auto& n : g.adjacency) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return g;
}

Vec2 normalize_position(Vec2 p, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw DataError("normalize_positions: image size must be positive");
  }
  const double scale = std::max(width, height) / 2.0;
  return {(p.x - width / 2.0) / scale, (p.y - height / 2.0) / scale};
}

template <class T>
BasicTensor<T> normalize_positions(const WireframeGraph& graph, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw DataError("normalize_positions: image size must be positive");
  }
  BasicTensor<T> out({graph.nodes.size(), 2});
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const Vec2 p = normalize_position(graph.nodes[i].pos, width, height);
    out(i, 0) = static_cast<T>(p.x);
    out(i, 1) = static_cast<T>(p.y);
  }
  return out;
}

template Tensor normalize_positions<float>(const WireframeGraph&, double, double);
template TensorD normalize_positions<double>(const WireframeGraph&, double, double);

}  // namespace plg
