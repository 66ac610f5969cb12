#include "pillarnest/geometry.hpp"

#include <cmath>

namespace pillarnest {

namespace {
constexpr double kPi = 3.14159265358979323846;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(s);
}
}  // namespace

float normalize_yaw(float yaw) {
  double y = std::fmod(double(yaw) + kPi, 2.0 * kPi);
  if (y <= 0.0) y += 2.0 * kPi;
  return float(y - kPi);
}

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(double(b.yaw));
  const double s = std::sin(double(b.yaw));
  const double hl = 0.5 * double(b.l);
  const double hw = 0.5 * double(b.w);
  // local corners (l along heading), counter-clockwise
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[size_t(i)] = {b.x + c * lx[i] - s * ly[i], b.y + s * lx[i] + c * ly[i]};
  return out;
}

// Sutherland-Hodgman: clip `subject` against each edge of convex `clip`
double convex_clip_area(const std::array<Vec2, 4>& subject, const std::array<Vec2, 4>& clip) {
  std::vector<Vec2> poly(subject.begin(), subject.end());
  for (int e = 0; e < 4 && poly.size() >= 2; ++e) {
    const Vec2& a = clip[size_t(e)];
    const Vec2& b = clip[size_t((e + 1) % 4)];
    std::vector<Vec2> next;
    next.reserve(poly.size() + 2);
    for (size_t i = 0; i < poly.size(); ++i) {
      const Vec2& p = poly[i];
      const Vec2& q = poly[(i + 1) % poly.size()];
      const double dp = cross(a, b, p);
      const double dq = cross(a, b, q);
      if (dp >= 0.0) next.push_back(p);
      if ((dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0)) {
        double t = dp / (dp - dq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    poly.swap(next);
  }
  return polygon_area(poly);
}

float rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = double(a.l) * a.w;
  const double area_b = double(b.l) * b.w;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0f;
  const double inter = convex_clip_area(bev_corners(a), bev_corners(b));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0f;
  return float(inter / uni);
}

bool point_in_box(const Box3D& b, float px, float py, float pz) {
  if (std::fabs(pz - b.z) > 0.5f * b.h) return false;
  const double c = std::cos(double(b.yaw));
  const double s = std::sin(double(b.yaw));
  const double dx = double(px) - b.x;
  const double dy = double(py) - b.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::fabs(lx) <= 0.5 * double(b.l) && std::fabs(ly) <= 0.5 * double(b.w);
}

}  // namespace pillarnest
