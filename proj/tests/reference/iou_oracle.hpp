#pragma once

// Test-side rotated-IoU oracle, deliberately a different algorithm from the
// library path: gather corners-inside-the-other-box plus all edge-edge
// intersection points, convex-hull them, shoelace the hull.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "pillarnest/geometry.hpp"

namespace oracle {

using pillarnest::Box3D;
using pillarnest::Vec2;

inline double cross3(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool inside_quad(const std::array<Vec2, 4>& q, const Vec2& p) {
  for (int i = 0; i < 4; ++i) {
    if (cross3(q[size_t(i)], q[size_t((i + 1) % 4)], p) < -1e-12) return false;
  }
  return true;
}

inline bool seg_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d, Vec2* out) {
  double d1 = cross3(c, d, a), d2 = cross3(c, d, b);
  double d3 = cross3(a, b, c), d4 = cross3(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    double t = d1 / (d1 - d2);
    *out = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
    return true;
  }
  return false;
}

inline double hull_area(std::vector<Vec2> pts) {
  if (pts.size() < 3) return 0.0;
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  std::vector<Vec2> hull;
  for (int pass = 0; pass < 2; ++pass) {
    size_t start = hull.size();
    for (const Vec2& p : pts) {
      while (hull.size() >= start + 2 &&
             cross3(hull[hull.size() - 2], hull[hull.size() - 1], p) <= 0)
        hull.pop_back();
      hull.push_back(p);
    }
    hull.pop_back();
    std::reverse(pts.begin(), pts.end());
  }
  if (hull.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& p = hull[i];
    const Vec2& q = hull[(i + 1) % hull.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(s);
}

inline double intersection_area(const Box3D& a, const Box3D& b) {
  auto ca = pillarnest::bev_corners(a);
  auto cb = pillarnest::bev_corners(b);
  std::vector<Vec2> pts;
  for (const Vec2& p : ca)
    if (inside_quad(cb, p)) pts.push_back(p);
  for (const Vec2& p : cb)
    if (inside_quad(ca, p)) pts.push_back(p);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      Vec2 x{0, 0};
      if (seg_intersect(ca[size_t(i)], ca[size_t((i + 1) % 4)], cb[size_t(j)],
                        cb[size_t((j + 1) % 4)], &x))
        pts.push_back(x);
    }
  return hull_area(std::move(pts));
}

inline float rotated_iou(const Box3D& a, const Box3D& b) {
  double inter = intersection_area(a, b);
  double uni = double(a.l) * a.w + double(b.l) * b.w - inter;
  return uni > 0.0 ? float(inter / uni) : 0.0f;
}

}  // namespace oracle
