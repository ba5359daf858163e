#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/random.hpp"

namespace pabm {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  int label = -1;

  size_t size() const { return points.size(); }
};

// Centers plus center-relative neighbor groups. `order` is the serialization
// permutation: order[k] = original patch index placed at sequence position k.
struct PatchSet {
  std::vector<Point3> centers;
  std::vector<std::vector<Point3>> patches;
  std::vector<size_t> order;
};

inline double sqdist(const Point3& a, const Point3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Greedy farthest point sampling. The first pick is drawn from the seeded
// stream; every later pick maximizes the minimum squared distance to the
// chosen set, ties resolved to the lowest index.
inline std::vector<size_t> farthest_point_sample(const PointCloud& cloud, size_t n,
                                                 uint64_t seed) {
  size_t N = cloud.size();
  check(N >= 1, "farthest_point_sample: empty cloud");
  check_usage(n >= 1 && n <= N, strformat("farthest_point_sample: n=%zu out of [1, %zu]",
                                          n, N));
  Rng rng(seed);
  std::vector<size_t> chosen;
  chosen.reserve(n);
  size_t first = static_cast<size_t>(rng.uniform_int(N));
  chosen.push_back(first);
  std::vector<double> min_sq(N);
  for (size_t j = 0; j < N; ++j) min_sq[j] = sqdist(cloud.points[j], cloud.points[first]);
  while (chosen.size() < n) {
    size_t best = 0;
    double best_d = -1.0;
    for (size_t j = 0; j < N; ++j) {
      if (min_sq[j] > best_d) {
        best_d = min_sq[j];
        best = j;
      }
    }
    chosen.push_back(best);
    for (size_t j = 0; j < N; ++j)
      min_sq[j] = std::min(min_sq[j], sqdist(cloud.points[j], cloud.points[best]));
  }
  return chosen;
}

// s nearest neighbors per center (Euclidean, ties to the lower index),
// expressed relative to the center. Order starts as identity; callers apply
// serialize_order.
inline PatchSet knn_group(const PointCloud& cloud, const std::vector<size_t>& center_indices,
                          size_t s) {
  size_t N = cloud.size();
  check_usage(s >= 1 && s <= N, strformat("knn_group: s=%zu out of [1, %zu]", s, N));
  PatchSet ps;
  ps.centers.reserve(center_indices.size());
  ps.patches.reserve(center_indices.size());
  std::vector<std::pair<double, size_t>> dist(N);
  for (size_t ci : center_indices) {
    check(ci < N, "knn_group: center index out of range");
    const Point3& c = cloud.points[ci];
    for (size_t j = 0; j < N; ++j) dist[j] = {sqdist(cloud.points[j], c), j};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<ptrdiff_t>(s), dist.end());
    std::vector<Point3> patch(s);
    for (size_t j = 0; j < s; ++j) {
      const Point3& p = cloud.points[dist[j].second];
      patch[j] = {p[0] - c[0], p[1] - c[1], p[2] - c[2]};
    }
    ps.centers.push_back(c);
    ps.patches.push_back(std::move(patch));
  }
  ps.order.resize(center_indices.size());
  std::iota(ps.order.begin(), ps.order.end(), 0);
  return ps;
}

enum class SerializeStrategy { lex, fps };

inline SerializeStrategy parse_serialize_strategy(const std::string& s) {
  if (s == "lex") return SerializeStrategy::lex;
  if (s == "fps") return SerializeStrategy::fps;
  throw UsageError("unknown serialize_order strategy: " + s);
}

// Total order over centers before the sequence models consume them.
// "lex": stable lexicographic sort on (x, y, z); "fps": keep greedy FPS order.
inline std::vector<size_t> serialize_order(const std::vector<Point3>& centers,
                                           SerializeStrategy strategy = SerializeStrategy::lex) {
  std::vector<size_t> perm(centers.size());
  std::iota(perm.begin(), perm.end(), 0);
  if (strategy == SerializeStrategy::fps) return perm;
  std::stable_sort(perm.begin(), perm.end(), [&](size_t a, size_t b) {
    return centers[a] < centers[b];  // array<double,3> compares lexicographically
  });
  return perm;
}

struct AugmentSpec {
  bool scale = false;
  bool translate = false;
  bool rotate = false;
};

// Random augmentation: rotation about the gravity (z) axis, uniform scale in
// [2/3, 3/2], per-axis translation in [-0.2, 0.2]. Applied in that order;
// label preserved. Only enabled transforms consume RNG draws.
inline PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, Rng& rng) {
  PointCloud out = cloud;
  if (spec.rotate) {
    double angle = rng.uniform(0.0, 6.283185307179586476925286766559);
    double ca = std::cos(angle), sa = std::sin(angle);
    for (Point3& p : out.points) {
      double x = p[0] * ca - p[1] * sa;
      double y = p[0] * sa + p[1] * ca;
      p[0] = x;
      p[1] = y;
    }
  }
  if (spec.scale) {
    double f = rng.uniform(2.0 / 3.0, 3.0 / 2.0);
    for (Point3& p : out.points)
      for (double& v : p) v *= f;
  }
  if (spec.translate) {
    Point3 t = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    for (Point3& p : out.points)
      for (int a = 0; a < 3; ++a) p[a] += t[a];
  }
  return out;
}

// Centroid to the origin, then scale so the farthest point sits at radius 1.
// A fully degenerate cloud (all points coincident) is only centered.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
  check(cloud.size() >= 1, "normalize_cloud: empty cloud");
  PointCloud out = cloud;
  Point3 centroid = {0.0, 0.0, 0.0};
  for (const Point3& p : out.points)
    for (int a = 0; a < 3; ++a) centroid[a] += p[a];
  for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<double>(out.size());
  double max_sq = 0.0;
  for (Point3& p : out.points) {
    for (int a = 0; a < 3; ++a) p[a] -= centroid[a];
    max_sq = std::max(max_sq, p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  }
  if (max_sq > 0.0) {
    double inv = 1.0 / std::sqrt(max_sq);
    for (Point3& p : out.points)
      for (double& v : p) v *= inv;
  }
  return out;
}

}  // namespace pabm
