#pragma once

// Synthetic scene generator and ground-truth oracle. Scenes are built in
// camera space around a randomly placed subject, the gaze targets one of the
// generated objects, and the view direction is the gaze perturbed to a
// calibrated mean angular error. Generation is counter-based per sample
// index (SplitMix64 streams), so output is independent of scheduling and
// identical across platforms.

#include <cstdint>
#include <vector>

#include "gaze3d/context.hpp"
#include "gaze3d/dataio.hpp"
#include "gaze3d/geom.hpp"
#include "gaze3d/rng.hpp"
#include "gaze3d/runconfig.hpp"

namespace gaze3d {

struct SceneSpec {
  int n_objects_min = 5;
  int n_objects_max = 30;
  double object_depth_min = 0.8;   // meters, before the scene rotation
  double object_depth_max = 4.0;
  double head_depth_min = 2.0;
  double head_depth_max = 6.0;
  double min_object_separation_deg = 15.0;  // angular spacing seen from the head
  double min_object_distance = 0.4;         // meters from the head
  double gaze_proximity_scale = 1.0;        // gazed-object choice ~ exp(-dist/scale), 0 = uniform
  double body_yaw_jitter_deg = 30.0;        // body facing scatter around the gaze yaw
  double joint_jitter_m = 0.01;
  double cam_yaw_range = M_PI;    // scene rotation about the head, radians (+-)
  double cam_pitch_range = 0.5;
  double cam_roll_range = 0.15;
  double view_noise_mae_deg = 20.0;
  double no_object_gaze_fraction = 0.0;
  int image_width = 640;
  int image_height = 480;
  CameraIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
  double object_radius = 0.12;  // rendered sphere radius, meters
  double head_radius = 0.11;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValueConfig to_kv() const;
  static SceneSpec from_kv(const KeyValueConfig& kv);
};

// The canonical 30-keypoint template: T-pose, camera-convention axes
// (y down, z forward), head keypoints 24..29 spanning a 0.16 m head.
const PoseKeypoints& skeleton_template();

struct GeneratedSample {
  ContextSampleRecord record;
  UnitVec3 gaze_gt;
  Vec3 head_position;   // pose-derived head anchor (the gaze origin)
  int gazed_index = -1; // -1: gaze not at an object
  std::array<double, 3> camera_rotation{};  // yaw, pitch, roll
};

// Deterministic per (spec.seed, index); sample `index` is identical no matter
// which range of indices is generated.
GeneratedSample generate_sample(const SceneSpec& spec, int index);
std::vector<GeneratedSample> generate(const SceneSpec& spec, int count);

// vMF concentration whose mean angular deviation equals the target (degrees),
// solved by bisection on a quadrature of the vMF angle distribution.
double vmf_concentration_for_mae(double target_deg);

// Perturbs g by a von Mises-Fisher draw calibrated so the expected angular
// shift equals target_deg. target 0 returns g unchanged.
UnitVec3 noise_at_mae(const UnitVec3& g, double target_deg, Rng& rng);

// Sphere-model depth render: z-buffer over the objects plus the subject head,
// per-object visibility masks, and the projected head box.
struct RenderResult {
  DepthSidecar sidecar;
  PixelBox head_box;
  std::vector<int> visible_instances;  // objects with at least one mask pixel
};
RenderResult render_depth(const GeneratedSample& sample, const SceneSpec& spec);

}  // namespace gaze3d
