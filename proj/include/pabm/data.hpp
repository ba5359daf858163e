#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/pointops.hpp"
#include "pabm/random.hpp"

namespace pabm {

struct Dataset {
  std::vector<PointCloud> samples;
  std::vector<std::string> class_names;
  std::string split;  // "train" or "test"

  size_t size() const { return samples.size(); }
};

inline const std::vector<std::string>& default_shape_kinds() {
  static const std::vector<std::string> kinds = {"sphere", "cube",  "torus",
                                                 "cylinder", "cone", "plane"};
  return kinds;
}

namespace detail_shapes {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline Point3 sample_sphere(Rng& rng) {
  // Normalized Gaussian triple; radius 1.
  double x, y, z, n2;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    n2 = x * x + y * y + z * z;
  } while (n2 < 1e-12);
  double inv = 1.0 / std::sqrt(n2);
  return {x * inv, y * inv, z * inv};
}

inline Point3 sample_cube(Rng& rng) {
  // Side 1: one of six equal-area faces, two free coordinates.
  size_t face = static_cast<size_t>(rng.uniform_int(6));
  double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-0.5, 0.5);
  double s = (face % 2 == 0) ? 0.5 : -0.5;
  switch (face / 2) {
    case 0: return {s, u, v};
    case 1: return {u, s, v};
    default: return {u, v, s};
  }
}

inline Point3 sample_torus(Rng& rng) {
  // Major R=0.7, minor r=0.3; rejection keeps the area measure uniform.
  constexpr double R = 0.7, r = 0.3;
  double u, v;
  do {
    u = rng.uniform(0.0, kTwoPi);
    v = rng.uniform(0.0, kTwoPi);
  } while (rng.uniform() > (R + r * std::cos(v)) / (R + r));
  double w = R + r * std::cos(v);
  return {w * std::cos(u), w * std::sin(u), r * std::sin(v)};
}

inline Point3 sample_cylinder(Rng& rng) {
  // Radius 0.5, height 1, capped; pieces chosen proportional to area.
  constexpr double r = 0.5;
  double lateral = kTwoPi * r;         // 2*pi*r*h, h=1
  double caps = kTwoPi * r * r;        // 2 * pi*r^2
  if (rng.uniform() < lateral / (lateral + caps)) {
    double a = rng.uniform(0.0, kTwoPi);
    double z = rng.uniform(-0.5, 0.5);
    return {r * std::cos(a), r * std::sin(a), z};
  }
  double z = (rng.uniform() < 0.5) ? -0.5 : 0.5;
  double a = rng.uniform(0.0, kTwoPi);
  double rho = r * std::sqrt(rng.uniform());
  return {rho * std::cos(a), rho * std::sin(a), z};
}

inline Point3 sample_cone(Rng& rng) {
  // Base radius 0.5 at z=-0.5, apex at z=+0.5, with base disk.
  constexpr double r = 0.5, h = 1.0;
  double slant = std::sqrt(r * r + h * h);
  double lateral = 3.14159265358979323846 * r * slant;
  double base = 3.14159265358979323846 * r * r;
  double a = rng.uniform(0.0, kTwoPi);
  if (rng.uniform() < lateral / (lateral + base)) {
    // Height fraction t from base; area density proportional to (1 - t).
    double t = 1.0 - std::sqrt(1.0 - rng.uniform());
    double rho = r * (1.0 - t);
    return {rho * std::cos(a), rho * std::sin(a), -0.5 + t * h};
  }
  double rho = r * std::sqrt(rng.uniform());
  return {rho * std::cos(a), rho * std::sin(a), -0.5};
}

inline Point3 sample_plane(Rng& rng) {
  return {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0};
}

}  // namespace detail_shapes

// Uniform surface sample of a unit-scale primitive plus isotropic Gaussian
// noise. Deterministic given the seed.
inline PointCloud generate_shape(const std::string& kind, size_t n_points,
                                 double noise_sigma, uint64_t seed) {
  check_usage(n_points >= 8, "generate_shape: n_points must be >= 8");
  Point3 (*sampler)(Rng&) = nullptr;
  if (kind == "sphere") sampler = detail_shapes::sample_sphere;
  else if (kind == "cube") sampler = detail_shapes::sample_cube;
  else if (kind == "torus") sampler = detail_shapes::sample_torus;
  else if (kind == "cylinder") sampler = detail_shapes::sample_cylinder;
  else if (kind == "cone") sampler = detail_shapes::sample_cone;
  else if (kind == "plane") sampler = detail_shapes::sample_plane;
  else throw UsageError("generate_shape: unknown kind: " + kind);

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n_points);
  for (size_t i = 0; i < n_points; ++i) cloud.points.push_back(sampler(rng));
  if (noise_sigma > 0.0)
    for (Point3& p : cloud.points)
      for (double& v : p) v += noise_sigma * rng.normal();
  return cloud;
}

// XYZ text format: one point per line, three decimal floats separated by
// single spaces, '#' comment lines, '\n' endings. Nine significant digits.
inline void save_xyz(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_xyz: cannot open " + path);
  for (const Point3& p : cloud.points)
    out << strformat("%.9g %.9g %.9g\n", p[0], p[1], p[2]);
  check(out.good(), "save_xyz: write failed for " + path);
}

inline PointCloud load_xyz(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_xyz: cannot open " + path);
  PointCloud cloud;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line[0] == '#') continue;
    std::istringstream ls(line);
    Point3 p;
    std::string extra;
    if (!(ls >> p[0] >> p[1] >> p[2]) || (ls >> extra))
      throw UsageError(strformat("load_xyz: malformed line %zu in ", lineno) + path);
    cloud.points.push_back(p);
  }
  check_usage(!cloud.points.empty(), "load_xyz: no points in " + path);
  return cloud;
}

inline size_t class_id_of(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  check_usage(it != names.end(), "unknown class name: " + name);
  return static_cast<size_t>(it - names.begin());
}

// Balanced synthetic dataset with explicit per-class train/test counts and
// per-sample disjoint seeds.
inline std::pair<Dataset, Dataset> make_split_dataset(
    const std::vector<std::string>& kinds, size_t train_per_class, size_t test_per_class,
    size_t n_points, double noise_sigma, uint64_t split_seed) {
  Dataset train, test;
  train.class_names = kinds;
  test.class_names = kinds;
  train.split = "train";
  test.split = "test";
  for (size_t k = 0; k < kinds.size(); ++k) {
    for (size_t i = 0; i < train_per_class + test_per_class; ++i) {
      uint64_t seed = Rng::mix(split_seed, (k << 24) + i);
      PointCloud c = generate_shape(kinds[k], n_points, noise_sigma, seed);
      c.label = static_cast<int>(k);
      (i < train_per_class ? train : test).samples.push_back(std::move(c));
    }
  }
  return {std::move(train), std::move(test)};
}

// 80/20 stratified split; exact when n_per_class is divisible by 5.
inline std::pair<Dataset, Dataset> make_synthetic_dataset(
    size_t n_per_class, const std::vector<std::string>& kinds, size_t n_points,
    double noise_sigma, uint64_t split_seed) {
  check_usage(n_per_class >= 2, "make_synthetic_dataset: n_per_class must be >= 2");
  size_t train_n = n_per_class * 4 / 5;
  return make_split_dataset(kinds, train_n, n_per_class - train_n, n_points, noise_sigma,
                            split_seed);
}

// Labels manifest: one "relative/path.xyz<TAB>class_name" per line. Class ids
// are assigned by sorted unique class name.
inline Dataset load_manifest(const std::string& manifest_path, const std::string& split) {
  std::ifstream in(manifest_path, std::ios::binary);
  check(in.good(), "load_manifest: cannot open " + manifest_path);
  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> classes;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    size_t tab = line.find('\t');
    check_usage(tab != std::string::npos,
                strformat("load_manifest: missing tab on line %zu in ", lineno) +
                    manifest_path);
    std::string rel = line.substr(0, tab);
    std::string cls = line.substr(tab + 1);
    check_usage(!rel.empty() && !cls.empty(),
                strformat("load_manifest: empty field on line %zu", lineno));
    entries.emplace_back(std::move(rel), std::move(cls));
    classes.insert(entries.back().second);
  }
  check_usage(!entries.empty(), "load_manifest: no entries in " + manifest_path);
  Dataset ds;
  ds.split = split;
  ds.class_names.assign(classes.begin(), classes.end());
  for (auto& [rel, cls] : entries) {
    PointCloud c = load_xyz((base / rel).string());
    c.label = static_cast<int>(class_id_of(ds.class_names, cls));
    ds.samples.push_back(std::move(c));
  }
  return ds;
}

}  // namespace pabm
