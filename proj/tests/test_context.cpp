#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "gaze3d/context.hpp"
#include "gaze3d/rng.hpp"

using namespace gaze3d;

namespace {

DepthMap make_depth(int w, int h) {
  DepthMap d;
  d.width = w;
  d.height = h;
  d.depth_mm.assign(static_cast<std::size_t>(w) * h, 0);
  return d;
}

const CameraIntrinsics kK{500.0, 500.0, 320.0, 240.0};

}  // namespace

TEST_CASE("head anchor from the stated formulas") {
  PoseKeypoints pose{};  // all zero
  pose[24] = {0.05, 0.0, 0.0};
  pose[28] = {-0.05, 0.0, 0.0};
  const HeadAnchor a = head_anchor(pose);
  CHECK(a.t_pose.x == doctest::Approx(0.0));
  CHECK(a.t_pose.y == doctest::Approx(0.0));
  CHECK(a.t_pose.z == doctest::Approx(0.0));
  CHECK(a.scale == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("head anchor equivariance") {
  Rng rng(1);
  PoseKeypoints pose{};
  for (auto& p : pose) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)};
  const HeadAnchor base = head_anchor(pose);

  SUBCASE("translation shifts t_pose, keeps s") {
    const Vec3 t{0.3, -0.7, 1.1};
    PoseKeypoints moved = pose;
    for (auto& p : moved) p = p + t;
    const HeadAnchor a = head_anchor(moved);
    CHECK((a.t_pose - (base.t_pose + t)).norm() < 1e-12);
    CHECK(a.scale == doctest::Approx(base.scale).epsilon(1e-12));
  }
  SUBCASE("doubling the scene halves s") {
    PoseKeypoints scaled = pose;
    for (auto& p : scaled) p = p * 2.0;
    const HeadAnchor a = head_anchor(scaled);
    CHECK(a.scale == doctest::Approx(base.scale / 2.0).epsilon(1e-12));
  }
  SUBCASE("coincident width keypoints degenerate") {
    PoseKeypoints bad = pose;
    bad[28] = bad[24];
    CHECK_THROWS_AS(head_anchor(bad), degenerate_error);
  }
}

TEST_CASE("pose subsampling selects the fixed index set") {
  PoseKeypoints pose{};
  for (int i = 0; i < kPoseKeypointCount; ++i) pose[i] = {static_cast<double>(i), 0.0, 0.0};
  const std::vector<Vec3> sub = subsample_pose(pose);
  REQUIRE(sub.size() == 15);
  const double expected[15] = {0, 4, 5, 6, 7, 8, 12, 18, 19, 20, 21, 24, 26, 28, 29};
  for (int i = 0; i < 15; ++i) CHECK(sub[i].x == expected[i]);

  // non-selected indices do not matter
  PoseKeypoints shuffled = pose;
  std::swap(shuffled[1], shuffled[2]);
  std::swap(shuffled[22], shuffled[23]);
  const std::vector<Vec3> sub2 = subsample_pose(shuffled);
  for (int i = 0; i < 15; ++i) CHECK(sub2[i].x == expected[i]);
}

TEST_CASE("subsampled head anchor uses the surviving head keypoints") {
  PoseKeypoints pose{};
  pose[24] = {0.05, 0.0, 0.0};
  pose[26] = {0.0, 0.1, 0.0};
  pose[28] = {-0.05, 0.0, 0.0};
  pose[29] = {0.0, -0.1, 0.0};
  const HeadAnchor a = head_anchor_subsampled(subsample_pose(pose));
  CHECK(a.t_pose.x == doctest::Approx(0.0));
  CHECK(a.t_pose.y == doctest::Approx(0.0));
  CHECK(a.scale == doctest::Approx(10.0));
}

TEST_CASE("object position is the coordinate-wise median") {
  SUBCASE("odd count") {
    DepthMap d = make_depth(640, 480);
    d.at(320, 239) = 1000;
    d.at(320, 240) = 2000;
    d.at(320, 241) = 9000;
    ObjectMask mask{{{320, 239}, {320, 240}, {320, 241}}};
    const Vec3 p = object_position(mask, d, kK);
    CHECK(p.x == doctest::Approx(0.0));
    CHECK(p.y == doctest::Approx(0.0));
    CHECK(p.z == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("single pixel") {
    DepthMap d = make_depth(640, 480);
    d.at(420, 240) = 5000;
    ObjectMask mask{{{420, 240}}};
    const Vec3 p = object_position(mask, d, kK);
    CHECK(p.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.z == doctest::Approx(5.0));
  }
  SUBCASE("robust to one outlier among 101 plane pixels") {
    DepthMap d = make_depth(640, 480);
    ObjectMask mask;
    for (int i = 0; i < 100; ++i) {
      const int u = 300 + i % 10, v = 230 + i / 10;
      d.at(u, v) = 2000;
      mask.pixels.emplace_back(u, v);
    }
    d.at(315, 245) = 60000;  // outlier
    mask.pixels.emplace_back(315, 245);
    const Vec3 p = object_position(mask, d, kK);
    CHECK(p.z == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("invariant to pixel order") {
    DepthMap d = make_depth(64, 64);
    Rng rng(3);
    ObjectMask mask;
    for (int u = 4; u < 20; ++u)
      for (int v = 4; v < 18; ++v) {
        d.at(u, v) = static_cast<std::uint16_t>(1000 + 100 * ((u * 7 + v * 13) % 11));
        mask.pixels.emplace_back(u, v);
      }
    const Vec3 a = object_position(mask, d, kK);
    ObjectMask reversed = mask;
    std::reverse(reversed.pixels.begin(), reversed.pixels.end());
    const Vec3 b = object_position(reversed, d, kK);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.z == b.z);
  }
  SUBCASE("even count takes the lower median") {
    DepthMap d = make_depth(640, 480);
    d.at(320, 240) = 1000;
    d.at(320, 241) = 2000;
    ObjectMask mask{{{320, 240}, {320, 241}}};
    CHECK(object_position(mask, d, kK).z == doctest::Approx(1.0));
  }
  SUBCASE("mask without valid depth is dropped") {
    DepthMap d = make_depth(64, 64);
    ObjectMask mask{{{1, 1}, {2, 2}}};
    CHECK_THROWS_AS(object_position(mask, d, kK), degenerate_error);
  }
  SUBCASE("invalid pixels are excluded from the median") {
    DepthMap d = make_depth(640, 480);
    d.at(320, 240) = 3000;
    ObjectMask mask{{{320, 240}, {321, 240}, {322, 240}}};  // two holes
    CHECK(object_position(mask, d, kK).z == doctest::Approx(3.0));
  }
}

TEST_CASE("head position from the box center with ring fallback") {
  SUBCASE("valid center") {
    DepthMap d = make_depth(640, 480);
    d.at(320, 240) = 2500;
    const auto p = head_position_from_depth(PixelBox{300, 220, 340, 260}, d, kK);
    REQUIRE(p.has_value());
    CHECK(p->x == doctest::Approx(0.0));
    CHECK(p->z == doctest::Approx(2.5));
  }
  SUBCASE("hand pinhole value") {
    DepthMap d = make_depth(640, 480);
    d.at(420, 240) = 5000;
    const auto p = head_position_from_depth(PixelBox{400, 220, 440, 260}, d, kK);
    REQUIRE(p.has_value());
    CHECK(p->x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p->z == doctest::Approx(5.0));
  }
  SUBCASE("hole at the center falls back to the nearest valid pixel") {
    DepthMap d = make_depth(640, 480);
    d.at(321, 240) = 3000;  // neighbor of the (320, 240) center
    const auto p = head_position_from_depth(PixelBox{300, 220, 340, 260}, d, kK);
    REQUIRE(p.has_value());
    CHECK(p->z == doctest::Approx(3.0));
    CHECK(p->x == doctest::Approx((321.0 - 320.0) / 500.0 * 3.0));
  }
  SUBCASE("empty box depth rejects the sample") {
    DepthMap d = make_depth(640, 480);
    CHECK_FALSE(head_position_from_depth(PixelBox{300, 220, 340, 260}, d, kK).has_value());
  }
  SUBCASE("degenerate box") {
    DepthMap d = make_depth(64, 64);
    CHECK_THROWS_AS(head_position_from_depth(PixelBox{10, 10, 10, 20}, d, kK), domain_error);
  }
}
