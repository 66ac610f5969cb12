#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pillarnest/geometry.hpp"
#include "pillarnest/rng.hpp"

namespace pillarnest {

struct Point {
  float x, y, z;
  float intensity;  // [0,1]
  float t;          // seconds relative to the sweep start
};

// Unordered point set; nothing downstream may depend on point order.
struct PointCloud {
  std::vector<Point> points;
};

struct Scene {
  PointCloud cloud;
  std::vector<Box3D> boxes;  // ground truth
  std::string scene_id;
  uint64_t seed = 0;
};

// ---- binary point format ----
// little-endian float32, layout x,y,z,intensity[,t]; t = 0 for 4-field files
PointCloud read_points(const std::string& path, int fields_per_point);
void write_points(const std::string& path, const PointCloud& cloud, int fields_per_point);

// ---- label / scene json ----
void write_scene_labels(const std::string& path, const Scene& scene);
Scene read_scene_labels(const std::string& path);  // cloud left empty

// ---- synthetic scene generation ----
struct ClassPrior {
  std::string name;
  int n_boxes = 2;
  float size_mean[3] = {4.5f, 1.9f, 1.6f};  // l, w, h
  float size_jitter = 0.15f;                // relative
  int points_min = 40;
  int points_max = 90;
};

struct SceneGenConfig {
  float x_min = -7.2f, x_max = 7.2f;
  float y_min = -7.2f, y_max = 7.2f;
  float ground_z = -1.6f;
  float ground_noise = 0.03f;
  int n_ground_points = 1500;
  float placement_margin = 0.8f;  // keep box centers this far inside the range
  int max_retries = 200;
  std::vector<ClassPrior> classes;  // empty -> default 3-class set
};

std::vector<ClassPrior> default_class_priors();

// Deterministic in seed; boxes are pairwise disjoint in BEV and every box
// contains at least one point.
Scene generate_scene(uint64_t seed, const SceneGenConfig& config);

// ---- ground-truth sample database (copy-paste augmentation) ----
struct GtSample {
  Box3D box;                  // original pose
  std::vector<Point> points;  // box-local coordinates (yaw removed, center at origin)
};

struct GtSampleDatabase {
  std::vector<std::vector<GtSample>> per_class;

  void add_scene(const Scene& scene, int n_classes);
  bool empty_for(int class_id) const;
};

GtSampleDatabase build_gt_database(const std::vector<Scene>& scenes, int n_classes);

// Paste up to k sampled boxes per class at their stored poses. Candidates that
// collide (BEV IoU > 0) with existing or already-pasted boxes are dropped;
// original cloud points inside an accepted box are removed.
Scene copy_paste(const Scene& scene, const GtSampleDatabase& db, int k_per_class, Rng& rng);

}  // namespace pillarnest
