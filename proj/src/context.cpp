#include "gaze3d/context.hpp"

#include <algorithm>
#include <cmath>

namespace gaze3d {

HeadAnchor head_anchor(const PoseKeypoints& pose) {
  Vec3 sum{};
  for (int i = kHeadKeypointFirst; i <= kHeadKeypointLast; ++i) sum = sum + pose[i];
  const double head_width = (pose[kHeadWidthA] - pose[kHeadWidthB]).norm();
  if (head_width <= 1e-6)
    throw degenerate_error("head_anchor: head keypoints 24 and 28 coincide");
  const int n = kHeadKeypointLast - kHeadKeypointFirst + 1;
  return {sum * (1.0 / n), 1.0 / head_width};
}

HeadAnchor head_anchor_subsampled(const std::vector<Vec3>& pose15) {
  if (static_cast<int>(pose15.size()) != kPoseSubsampleCount)
    throw domain_error("head_anchor_subsampled: expected 15 keypoints");
  // subsampled positions of original indices 24, 26, 28, 29
  const int head_slots[] = {11, 12, 13, 14};
  Vec3 sum{};
  for (int slot : head_slots) sum = sum + pose15[slot];
  const double head_width = (pose15[11] - pose15[13]).norm();  // 24 vs 28
  if (head_width <= 1e-6)
    throw degenerate_error("head_anchor_subsampled: head keypoints 24 and 28 coincide");
  return {sum * 0.25, 1.0 / head_width};
}

std::vector<Vec3> subsample_pose(const PoseKeypoints& pose) {
  std::vector<Vec3> out;
  out.reserve(kPoseSubsampleCount);
  for (int idx : kPoseSubsampleIndices) out.push_back(pose[idx]);
  return out;
}

namespace {

double lower_median(std::vector<double>& values) {
  // lower median for even counts: element at index (n-1)/2 of the sorted order
  const std::size_t k = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

}  // namespace

Vec3 object_position(const ObjectMask& mask, const DepthMap& depth, const CameraIntrinsics& K) {
  std::vector<double> xs, ys, zs;
  xs.reserve(mask.pixels.size());
  ys.reserve(mask.pixels.size());
  zs.reserve(mask.pixels.size());
  for (const auto& [u, v] : mask.pixels) {
    if (!depth.valid_at(u, v)) continue;
    const Vec3 p = backproject(u, v, depth.meters_at(u, v), K);
    xs.push_back(p.x);
    ys.push_back(p.y);
    zs.push_back(p.z);
  }
  if (xs.empty())
    throw degenerate_error("object_position: no mask pixel has valid depth");
  return {lower_median(xs), lower_median(ys), lower_median(zs)};
}

std::optional<Vec3> head_position_from_depth(const PixelBox& head_box, const DepthMap& depth,
                                             const CameraIntrinsics& K) {
  if (!head_box.valid()) throw domain_error("head_position_from_depth: empty head box");
  const int cu = head_box.center_u();
  const int cv = head_box.center_v();
  const int max_radius =
      std::max({cu - head_box.u_min, head_box.u_max - cu, cv - head_box.v_min, head_box.v_max - cv});
  // rings of increasing Chebyshev radius around the center, scanned in a
  // fixed order so the fallback pixel is deterministic
  for (int r = 0; r <= max_radius; ++r) {
    for (int dv = -r; dv <= r; ++dv) {
      for (int du = -r; du <= r; ++du) {
        if (std::max(std::abs(du), std::abs(dv)) != r) continue;
        const int u = cu + du, v = cv + dv;
        if (u < head_box.u_min || u > head_box.u_max || v < head_box.v_min || v > head_box.v_max)
          continue;
        if (depth.valid_at(u, v)) return backproject(u, v, depth.meters_at(u, v), K);
      }
    }
  }
  return std::nullopt;
}

}  // namespace gaze3d
