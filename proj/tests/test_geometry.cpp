#include <doctest.h>

#include <cmath>

#include "pillarnest/geometry.hpp"
#include "pillarnest/rng.hpp"
#include "reference/iou_oracle.hpp"

using namespace pillarnest;

TEST_CASE("yaw normalization lands in (-pi, pi]") {
  CHECK(normalize_yaw(0.0f) == doctest::Approx(0.0f));
  CHECK(normalize_yaw(float(M_PI)) == doctest::Approx(float(M_PI)));
  CHECK(normalize_yaw(float(-M_PI)) == doctest::Approx(float(M_PI)));
  CHECK(normalize_yaw(float(3 * M_PI)) == doctest::Approx(float(M_PI)).epsilon(1e-5));
  CHECK(normalize_yaw(7.0f) == doctest::Approx(7.0f - 2 * float(M_PI)));
}

TEST_CASE("axis-aligned IoU arithmetic") {
  Box3D a{0, 0, 0, 1, 1, 1, 0, 0, 0, 0};
  Box3D b = a;
  CHECK(rotated_iou_bev(a, b) == doctest::Approx(1.0f));
  b.x = 0.5f;  // unit squares offset by 0.5 -> inter 0.5, union 1.5
  CHECK(rotated_iou_bev(a, b) == doctest::Approx(1.0f / 3.0f));
  b.x = 5.0f;
  CHECK(rotated_iou_bev(a, b) == doctest::Approx(0.0f));
}

TEST_CASE("45-degree rotated square over unit square") {
  // sqrt(2)-wide diamond fully covers the unit square: inter 1, union 2
  Box3D a{0, 0, 0, 1, 1, 1, 0, 0, 0, 0};
  Box3D b{0, 0, 0, std::sqrt(2.0f), std::sqrt(2.0f), 1, float(M_PI / 4), 0, 0, 0};
  float iou = rotated_iou_bev(a, b);
  CHECK(iou == doctest::Approx(0.5f).epsilon(1e-4));
}

TEST_CASE("rotated IoU matches the hull-based oracle on random boxes") {
  Rng rng(2024);
  auto rand_box = [&]() {
    Box3D b;
    b.x = rng.uniform(-3, 3);
    b.y = rng.uniform(-3, 3);
    b.l = rng.uniform(0.3f, 4.0f);
    b.w = rng.uniform(0.3f, 4.0f);
    b.h = 1;
    b.yaw = rng.uniform(-float(M_PI), float(M_PI));
    return b;
  };
  for (int k = 0; k < 500; ++k) {
    Box3D a = rand_box(), b = rand_box();
    float lib = rotated_iou_bev(a, b);
    float ref = oracle::rotated_iou(a, b);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-4));
  }
}

TEST_CASE("point_in_box respects yaw and height") {
  Box3D b{1, 1, 0, 4, 2, 2, float(M_PI / 2), 0, 0, 0};
  // heading along +y: extent y in [-1,3], x in [0,2]
  CHECK(point_in_box(b, 1.0f, 2.9f, 0.0f));
  CHECK_FALSE(point_in_box(b, 1.0f, 3.1f, 0.0f));
  CHECK(point_in_box(b, 1.9f, 1.0f, 0.9f));
  CHECK_FALSE(point_in_box(b, 1.0f, 1.0f, 1.1f));
}
