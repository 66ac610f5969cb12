#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace pillarnest {

// Oriented 3D box. score/iou_score are only meaningful on predictions.
struct Box3D {
  float x = 0, y = 0, z = 0;     // center, meters
  float l = 0, w = 0, h = 0;     // size, meters, strictly positive
  float yaw = 0;                 // radians in (-pi, pi]
  int class_id = 0;
  float score = 0;
  float iou_score = 0;
};

// normalize to (-pi, pi]
float normalize_yaw(float yaw);

struct Vec2 {
  double x, y;
};

// BEV footprint corners, counter-clockwise
std::array<Vec2, 4> bev_corners(const Box3D& b);

// exact rotated IoU of the BEV footprints (convex clipping + shoelace)
float rotated_iou_bev(const Box3D& a, const Box3D& b);

// point-in-box test in 3D (closed box, box-local axes)
bool point_in_box(const Box3D& b, float px, float py, float pz);

// convex polygon intersection area helpers (exposed for the NMS oracle tests)
double convex_clip_area(const std::array<Vec2, 4>& subject, const std::array<Vec2, 4>& clip);

}  // namespace pillarnest
