#pragma once

// 3D context extraction from per-sample inputs: pose normalization constants,
// keypoint subsampling, object positions from instance masks + depth, and
// head localization from the head bounding box.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "gaze3d/geom.hpp"

namespace gaze3d {

inline constexpr int kPoseKeypointCount = 30;
inline constexpr int kPoseSubsampleCount = 15;

// Full-body keypoints in the smpl+head_30 ordering, camera space, meters.
// Head keypoints are indices 24..29; 24 and 28 span the head width.
using PoseKeypoints = std::array<Vec3, kPoseKeypointCount>;

inline constexpr std::array<int, kPoseSubsampleCount> kPoseSubsampleIndices = {
    0, 4, 5, 6, 7, 8, 12, 18, 19, 20, 21, 24, 26, 28, 29};

inline constexpr int kHeadKeypointFirst = 24;
inline constexpr int kHeadKeypointLast = 29;
inline constexpr int kHeadWidthA = 24;
inline constexpr int kHeadWidthB = 28;

struct HeadAnchor {
  Vec3 t_pose;   // mean of head keypoints 24..29
  double scale;  // 1 / distance(p24, p28)
};

// Head position and inverse head width used to normalize the pose. Throws
// degenerate_error when keypoints 24 and 28 are closer than 1e-6 m.
HeadAnchor head_anchor(const PoseKeypoints& pose);

// Anchor from an already-subsampled pose: the mean runs over the four head
// keypoints that survive subsampling (24, 26, 28, 29).
HeadAnchor head_anchor_subsampled(const std::vector<Vec3>& pose15);

// The 15 keypoints at kPoseSubsampleIndices, in ascending index order.
std::vector<Vec3> subsample_pose(const PoseKeypoints& pose);

// Depth map stored as 16-bit millimeters; 0 marks an invalid measurement.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> depth_mm;

  bool in_bounds(int u, int v) const { return u >= 0 && u < width && v >= 0 && v < height; }
  bool valid_at(int u, int v) const { return in_bounds(u, v) && depth_mm[v * width + u] != 0; }
  double meters_at(int u, int v) const { return depth_mm[v * width + u] * 1e-3; }
  std::uint16_t& at(int u, int v) { return depth_mm[v * width + u]; }
};

// Pixels of one instance mask.
struct ObjectMask {
  std::vector<std::pair<int, int>> pixels;  // (u, v)
};

struct PixelBox {
  int u_min = 0, v_min = 0, u_max = 0, v_max = 0;

  bool valid() const { return u_min < u_max && v_min < v_max; }
  int center_u() const { return (u_min + u_max) / 2; }
  int center_v() const { return (v_min + v_max) / 2; }
};

// Coordinate-wise median (lower median for even counts) of the mask pixels
// backprojected through the depth map. Throws degenerate_error when no mask
// pixel has valid depth (the object is dropped).
Vec3 object_position(const ObjectMask& mask, const DepthMap& depth, const CameraIntrinsics& K);

// Head position t_object from the depth at the head-box center, falling back
// to the nearest valid pixel inside the box (ring search around the center).
// Empty when the box contains no valid depth (the sample is rejected).
std::optional<Vec3> head_position_from_depth(const PixelBox& head_box, const DepthMap& depth,
                                             const CameraIntrinsics& K);

}  // namespace gaze3d
