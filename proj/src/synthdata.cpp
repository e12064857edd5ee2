#include "gaze3d/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace gaze3d {

void SceneSpec::validate() const {
  if (n_objects_min < 0 || n_objects_max < n_objects_min)
    throw domain_error("SceneSpec: invalid object count range");
  if (!(object_depth_min > 0) || object_depth_max < object_depth_min)
    throw domain_error("SceneSpec: invalid object depth range");
  if (!(head_depth_min > 0) || head_depth_max < head_depth_min)
    throw domain_error("SceneSpec: invalid head depth range");
  if (view_noise_mae_deg < 0) throw domain_error("SceneSpec: noise MAE must be >= 0");
  if (no_object_gaze_fraction < 0 || no_object_gaze_fraction > 1)
    throw domain_error("SceneSpec: no_object_gaze_fraction must be in [0, 1]");
  if (!intrinsics.valid()) throw domain_error("SceneSpec: invalid intrinsics");
  if (image_width <= 0 || image_height <= 0) throw domain_error("SceneSpec: invalid image size");
}

KeyValueConfig SceneSpec::to_kv() const {
  KeyValueConfig kv;
  kv.set_int("scene.n_objects_min", n_objects_min);
  kv.set_int("scene.n_objects_max", n_objects_max);
  kv.set_double("scene.object_depth_min", object_depth_min);
  kv.set_double("scene.object_depth_max", object_depth_max);
  kv.set_double("scene.head_depth_min", head_depth_min);
  kv.set_double("scene.head_depth_max", head_depth_max);
  kv.set_double("scene.min_object_separation_deg", min_object_separation_deg);
  kv.set_double("scene.min_object_distance", min_object_distance);
  kv.set_double("scene.gaze_proximity_scale", gaze_proximity_scale);
  kv.set_double("scene.body_yaw_jitter_deg", body_yaw_jitter_deg);
  kv.set_double("scene.joint_jitter_m", joint_jitter_m);
  kv.set_double("scene.cam_yaw_range", cam_yaw_range);
  kv.set_double("scene.cam_pitch_range", cam_pitch_range);
  kv.set_double("scene.cam_roll_range", cam_roll_range);
  kv.set_double("scene.view_noise_mae_deg", view_noise_mae_deg);
  kv.set_double("scene.no_object_gaze_fraction", no_object_gaze_fraction);
  kv.set_int("scene.image_width", image_width);
  kv.set_int("scene.image_height", image_height);
  kv.set_double("scene.fx", intrinsics.fx);
  kv.set_double("scene.fy", intrinsics.fy);
  kv.set_double("scene.cx", intrinsics.cx);
  kv.set_double("scene.cy", intrinsics.cy);
  kv.set_double("scene.object_radius", object_radius);
  kv.set_double("scene.head_radius", head_radius);
  kv.set_uint("scene.seed", seed);
  return kv;
}

SceneSpec SceneSpec::from_kv(const KeyValueConfig& kv) {
  SceneSpec s;
  const auto geti = [&](const char* k, int fallback) {
    return kv.has(k) ? static_cast<int>(kv.get_int(k)) : fallback;
  };
  const auto getd = [&](const char* k, double fallback) {
    return kv.has(k) ? kv.get_double(k) : fallback;
  };
  s.n_objects_min = geti("scene.n_objects_min", s.n_objects_min);
  s.n_objects_max = geti("scene.n_objects_max", s.n_objects_max);
  s.object_depth_min = getd("scene.object_depth_min", s.object_depth_min);
  s.object_depth_max = getd("scene.object_depth_max", s.object_depth_max);
  s.head_depth_min = getd("scene.head_depth_min", s.head_depth_min);
  s.head_depth_max = getd("scene.head_depth_max", s.head_depth_max);
  s.min_object_separation_deg = getd("scene.min_object_separation_deg", s.min_object_separation_deg);
  s.min_object_distance = getd("scene.min_object_distance", s.min_object_distance);
  s.gaze_proximity_scale = getd("scene.gaze_proximity_scale", s.gaze_proximity_scale);
  s.body_yaw_jitter_deg = getd("scene.body_yaw_jitter_deg", s.body_yaw_jitter_deg);
  s.joint_jitter_m = getd("scene.joint_jitter_m", s.joint_jitter_m);
  s.cam_yaw_range = getd("scene.cam_yaw_range", s.cam_yaw_range);
  s.cam_pitch_range = getd("scene.cam_pitch_range", s.cam_pitch_range);
  s.cam_roll_range = getd("scene.cam_roll_range", s.cam_roll_range);
  s.view_noise_mae_deg = getd("scene.view_noise_mae_deg", s.view_noise_mae_deg);
  s.no_object_gaze_fraction = getd("scene.no_object_gaze_fraction", s.no_object_gaze_fraction);
  s.image_width = geti("scene.image_width", s.image_width);
  s.image_height = geti("scene.image_height", s.image_height);
  s.intrinsics.fx = getd("scene.fx", s.intrinsics.fx);
  s.intrinsics.fy = getd("scene.fy", s.intrinsics.fy);
  s.intrinsics.cx = getd("scene.cx", s.intrinsics.cx);
  s.intrinsics.cy = getd("scene.cy", s.intrinsics.cy);
  s.object_radius = getd("scene.object_radius", s.object_radius);
  s.head_radius = getd("scene.head_radius", s.head_radius);
  s.seed = kv.has("scene.seed") ? kv.get_uint("scene.seed") : s.seed;
  s.validate();
  return s;
}

const PoseKeypoints& skeleton_template() {
  // y down, z forward (the facing direction), pelvis at the origin
  static const PoseKeypoints tpl = {{
      {0.00, 0.00, 0.00},    // 0  pelvis
      {-0.10, 0.02, 0.00},   // 1  hip L
      {0.10, 0.02, 0.00},    // 2  hip R
      {0.00, -0.12, 0.01},   // 3  spine
      {-0.11, 0.48, 0.01},   // 4  knee L
      {0.11, 0.48, 0.01},    // 5  knee R
      {0.00, -0.24, 0.02},   // 6  chest
      {-0.12, 0.90, 0.02},   // 7  ankle L
      {0.12, 0.90, 0.02},    // 8  ankle R
      {0.00, -0.33, 0.02},   // 9  upper chest
      {-0.13, 0.97, 0.12},   // 10 foot L
      {0.13, 0.97, 0.12},    // 11 foot R
      {0.00, -0.50, 0.01},   // 12 neck
      {-0.06, -0.46, 0.01},  // 13 clavicle L
      {0.06, -0.46, 0.01},   // 14 clavicle R
      {0.00, -0.58, 0.04},   // 15 jaw
      {-0.18, -0.44, 0.00},  // 16 shoulder L
      {0.18, -0.44, 0.00},   // 17 shoulder R
      {-0.44, -0.42, 0.01},  // 18 elbow L
      {0.44, -0.42, 0.01},   // 19 elbow R
      {-0.68, -0.42, 0.02},  // 20 wrist L
      {0.68, -0.42, 0.02},   // 21 wrist R
      {-0.76, -0.42, 0.03},  // 22 hand L
      {0.76, -0.42, 0.03},   // 23 hand R
      {-0.08, -0.65, 0.00},  // 24 head L
      {0.00, -0.73, 0.01},   // 25 head top
      {0.00, -0.63, 0.10},   // 26 nose
      {0.00, -0.65, -0.09},  // 27 head back
      {0.08, -0.65, 0.00},   // 28 head R
      {0.00, -0.58, 0.05},   // 29 chin
  }};
  return tpl;
}

// ---- view-noise calibration -----------------------------------------------------

namespace {

// Mean angular deviation (radians) of a vMF draw around its mean direction.
// With w = cos(angle), p(w) ~ exp(kappa w) on [-1, 1]; substituting
// t = kappa (1 - w) gives E[angle] as an exponential average, integrated by
// composite Simpson on [0, min(2 kappa, 60)].
double vmf_mean_angle(double kappa) {
  const double T = std::min(2.0 * kappa, 60.0);
  const int n = 4096;  // even
  const double h = T / n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = std::clamp(1.0 - t / kappa, -1.0, 1.0);
    const double f = std::exp(-t);
    const double weight = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    num += weight * std::acos(w) * f;
    den += weight * f;
  }
  return num / den;
}

}  // namespace

double vmf_concentration_for_mae(double target_deg) {
  if (!(target_deg > 0)) throw domain_error("vmf_concentration_for_mae: target must be positive");
  if (target_deg >= 89.0)
    throw domain_error("vmf_concentration_for_mae: target beyond the isotropic limit");
  static std::mutex cache_mutex;
  static std::map<double, double> cache;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(target_deg);
    if (it != cache.end()) return it->second;
  }
  const double target = radians(target_deg);
  double lo = 1e-4, hi = 1e8;  // mean angle decreases with kappa
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = std::sqrt(lo * hi);
    if (vmf_mean_angle(mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  const double kappa = std::sqrt(lo * hi);
  std::lock_guard<std::mutex> lock(cache_mutex);
  cache[target_deg] = kappa;
  return kappa;
}

UnitVec3 noise_at_mae(const UnitVec3& g, double target_deg, Rng& rng) {
  if (target_deg == 0.0) return g;
  const double kappa = vmf_concentration_for_mae(target_deg);
  // Wood-style inverse-CDF draw of w = cos(angle), numerically stable form
  double u = rng.uniform01();
  double w = 1.0 + std::log(u + (1.0 - u) * std::exp(-2.0 * kappa)) / kappa;
  w = std::clamp(w, -1.0, 1.0);
  // uniform direction in the tangent plane
  const Vec3 gv = g.vec();
  const Vec3 helper = std::abs(gv.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const UnitVec3 e1{gv.cross(helper)};
  const Vec3 e2 = gv.cross(e1.vec());
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - w * w));
  return UnitVec3(gv * w + (e1.vec() * std::cos(phi) + e2 * std::sin(phi)) * sin_theta);
}

// ---- scene generation -----------------------------------------------------------

namespace {

constexpr std::uint64_t kStreamScene = 0x7363656E65ull;    // per-sample scene content
constexpr std::uint64_t kStreamNoise = 0x6E6F697365ull;    // view-direction noise
constexpr std::uint64_t kStreamCamera = 0x63616D657261ull; // camera rotation draw

Vec3 rotate_y(const Vec3& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x + s * p.z, p.y, -s * p.x + c * p.z};
}

}  // namespace

GeneratedSample generate_sample(const SceneSpec& spec, int index) {
  spec.validate();
  Rng rng(spec.seed, kStreamScene, static_cast<std::uint64_t>(index));
  const CameraIntrinsics& K = spec.intrinsics;
  const double W = spec.image_width, H = spec.image_height;

  // subject head target inside the central image region
  const double head_u = rng.uniform(0.2 * W, 0.8 * W);
  const double head_v = rng.uniform(0.2 * H, 0.8 * H);
  const double head_depth = rng.uniform(spec.head_depth_min, spec.head_depth_max);
  const Vec3 head_target = backproject(head_u, head_v, head_depth, K);

  // objects: frustum pixels at random depth, enforcing the head-relative
  // angular separation so instances occupy distinct visual directions
  const int n_target = spec.n_objects_min +
                       static_cast<int>(rng.uniform_index(
                           static_cast<std::uint64_t>(spec.n_objects_max - spec.n_objects_min + 1)));
  const double cos_min_sep = std::cos(radians(spec.min_object_separation_deg));
  std::vector<Vec3> objects;
  std::vector<Vec3> object_dirs;
  std::vector<double> object_dists;
  int tries = 0;
  const int max_tries = 60 * std::max(1, n_target);
  while (static_cast<int>(objects.size()) < n_target && tries < max_tries) {
    ++tries;
    const Vec3 p = backproject(rng.uniform(0.0, W), rng.uniform(0.0, H),
                               rng.uniform(spec.object_depth_min, spec.object_depth_max), K);
    const Vec3 d = p - head_target;
    const double dist = d.norm();
    if (dist < spec.min_object_distance) continue;
    const Vec3 ud = d * (1.0 / dist);
    bool too_close = false;
    for (const Vec3& u : object_dirs)
      if (u.dot(ud) > cos_min_sep) {
        too_close = true;
        break;
      }
    if (too_close) continue;
    objects.push_back(p);
    object_dirs.push_back(ud);
    object_dists.push_back(dist);
  }

  // gazed object: proximity-weighted choice (nearby objects draw gaze more)
  int gazed = -1;
  const bool gaze_at_object =
      !objects.empty() && rng.uniform01() >= spec.no_object_gaze_fraction;
  if (gaze_at_object) {
    if (spec.gaze_proximity_scale > 0) {
      std::vector<double> weights(objects.size());
      double total = 0.0;
      for (std::size_t i = 0; i < objects.size(); ++i) {
        weights[i] = std::exp(-object_dists[i] / spec.gaze_proximity_scale);
        total += weights[i];
      }
      double pick = rng.uniform01() * total;
      gazed = static_cast<int>(objects.size()) - 1;
      for (std::size_t i = 0; i < weights.size(); ++i) {
        pick -= weights[i];
        if (pick <= 0) {
          gazed = static_cast<int>(i);
          break;
        }
      }
    } else {
      gazed = static_cast<int>(rng.uniform_index(objects.size()));
    }
  }

  // preliminary gaze (from the head target) drives the body yaw; the final
  // gaze is re-derived from the jittered head anchor below
  Vec3 gaze_dir_prelim;
  if (gazed >= 0) {
    gaze_dir_prelim = object_dirs[gazed];
  } else {
    // free gaze: uniform direction
    const double zc = rng.uniform(-1.0, 1.0);
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    gaze_dir_prelim = {r * std::cos(az), r * std::sin(az), zc};
  }
  const double yaw_gaze = std::atan2(gaze_dir_prelim.x, gaze_dir_prelim.z);
  const double body_yaw =
      yaw_gaze + rng.uniform(-1.0, 1.0) * radians(spec.body_yaw_jitter_deg);

  // place the skeleton so the template head lands on the head target
  const PoseKeypoints& tpl = skeleton_template();
  Vec3 tpl_head{};
  for (int i = kHeadKeypointFirst; i <= kHeadKeypointLast; ++i) tpl_head = tpl_head + tpl[i];
  tpl_head = tpl_head * (1.0 / 6.0);
  const Vec3 pelvis = head_target - rotate_y(tpl_head, body_yaw);
  std::vector<Vec3> pose(kPoseKeypointCount);
  for (int i = 0; i < kPoseKeypointCount; ++i) {
    const Vec3 jitter{rng.normal(0.0, spec.joint_jitter_m), rng.normal(0.0, spec.joint_jitter_m),
                      rng.normal(0.0, spec.joint_jitter_m)};
    pose[i] = pelvis + rotate_y(tpl[i], body_yaw) + jitter;
  }

  // actual head anchor after jitter; the gaze originates here
  Vec3 head_actual{};
  for (int i = kHeadKeypointFirst; i <= kHeadKeypointLast; ++i) head_actual = head_actual + pose[i];
  head_actual = head_actual * (1.0 / 6.0);

  UnitVec3 gaze_gt = gazed >= 0 ? UnitVec3(objects[gazed] - head_actual)
                                : UnitVec3(gaze_dir_prelim);

  Rng noise_rng(spec.seed, kStreamNoise, static_cast<std::uint64_t>(index));
  UnitVec3 view = noise_at_mae(gaze_gt, spec.view_noise_mae_deg, noise_rng);

  // scene rotation about the head anchor: the camera-pose variability
  Rng cam_rng(spec.seed, kStreamCamera, static_cast<std::uint64_t>(index));
  const double yaw = cam_rng.uniform(-spec.cam_yaw_range, spec.cam_yaw_range);
  const double pitch = cam_rng.uniform(-spec.cam_pitch_range, spec.cam_pitch_range);
  const double roll = cam_rng.uniform(-spec.cam_roll_range, spec.cam_roll_range);
  const Rotation3 R_cam = euler_xyz(pitch, yaw, roll);
  const auto rotate_about_head = [&](const Vec3& p) {
    return head_actual + R_cam.apply(p - head_actual);
  };
  for (Vec3& p : pose) p = rotate_about_head(p);
  for (Vec3& p : objects) p = rotate_about_head(p);
  gaze_gt = R_cam.apply(gaze_gt);
  view = R_cam.apply(view);

  GeneratedSample out;
  out.gaze_gt = gaze_gt;
  out.head_position = head_actual;  // the rotation pivot, unchanged
  out.gazed_index = gazed;
  out.camera_rotation = {yaw, pitch, roll};

  ContextSampleRecord& rec = out.record;
  char id[16];
  std::snprintf(id, sizeof(id), "s%06d", index);
  rec.id = id;
  rec.intrinsics = K;
  rec.pose_keypoints = std::move(pose);
  rec.object_positions = std::move(objects);
  rec.view_dir = view;
  rec.gaze_gt = gaze_gt;
  rec.gazed_index = gazed;
  rec.camera_rotation = out.camera_rotation;

  // projected head box (from the head sphere); clamped to the image
  const double px = K.fx * spec.head_radius / head_actual.z;
  const double cu = K.cx + K.fx * head_actual.x / head_actual.z;
  const double cv = K.cy + K.fy * head_actual.y / head_actual.z;
  PixelBox head_box{static_cast<int>(std::floor(cu - px)), static_cast<int>(std::floor(cv - px)),
                    static_cast<int>(std::ceil(cu + px)), static_cast<int>(std::ceil(cv + px))};
  if (head_box.valid()) rec.head_box = head_box;

  // body box from the projected keypoints (only meaningful in front of the camera)
  double u0 = 1e18, v0 = 1e18, u1 = -1e18, v1 = -1e18;
  bool any_front = false;
  for (const Vec3& p : rec.pose_keypoints) {
    if (p.z <= 0.1) continue;
    any_front = true;
    const double u = K.cx + K.fx * p.x / p.z;
    const double v = K.cy + K.fy * p.y / p.z;
    u0 = std::min(u0, u);
    v0 = std::min(v0, v);
    u1 = std::max(u1, u);
    v1 = std::max(v1, v);
  }
  if (any_front) {
    PixelBox body{static_cast<int>(std::floor(u0)) - 5, static_cast<int>(std::floor(v0)) - 5,
                  static_cast<int>(std::ceil(u1)) + 5, static_cast<int>(std::ceil(v1)) + 5};
    if (body.valid()) rec.body_box = body;
  }
  return out;
}

std::vector<GeneratedSample> generate(const SceneSpec& spec, int count) {
  std::vector<GeneratedSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

// ---- depth rendering --------------------------------------------------------------

RenderResult render_depth(const GeneratedSample& sample, const SceneSpec& spec) {
  const CameraIntrinsics& K = spec.intrinsics;
  RenderResult rr;
  DepthMap& depth = rr.sidecar.depth;
  depth.width = spec.image_width;
  depth.height = spec.image_height;
  depth.depth_mm.assign(static_cast<std::size_t>(depth.width) * depth.height, 0);
  rr.sidecar.instance_index.assign(depth.depth_mm.size(), 0);

  std::vector<double> zbuf(depth.depth_mm.size(), std::numeric_limits<double>::infinity());

  // sphere index: 0..n-1 objects, n = head (depth only, no mask)
  std::vector<Vec3> centers = sample.record.object_positions.value_or(std::vector<Vec3>{});
  std::vector<double> radii(centers.size(), spec.object_radius);
  centers.push_back(sample.head_position);
  radii.push_back(spec.head_radius);

  for (std::size_t s = 0; s < centers.size(); ++s) {
    const Vec3& c = centers[s];
    const double r = radii[s];
    if (c.z <= r) continue;  // behind or straddling the camera plane
    // conservative projected bounds
    const double ru = std::abs(K.fx) * r / (c.z - r);
    const double cu = K.cx + K.fx * c.x / c.z;
    const double cv = K.cy + K.fy * c.y / c.z;
    const int u0 = std::max(0, static_cast<int>(std::floor(cu - ru - 1)));
    const int u1 = std::min(depth.width - 1, static_cast<int>(std::ceil(cu + ru + 1)));
    const int v0 = std::max(0, static_cast<int>(std::floor(cv - ru - 1)));
    const int v1 = std::min(depth.height - 1, static_cast<int>(std::ceil(cv + ru + 1)));
    for (int v = v0; v <= v1; ++v) {
      for (int u = u0; u <= u1; ++u) {
        // ray through the pixel center
        const Vec3 ray = UnitVec3(Vec3{(u + 0.5 - K.cx) / K.fx, (v + 0.5 - K.cy) / K.fy, 1.0}).vec();
        const double tc = ray.dot(c);
        if (tc <= 0) continue;
        const double d2 = c.dot(c) - tc * tc;
        if (d2 > r * r) continue;
        const double t = tc - std::sqrt(r * r - d2);  // near intersection
        if (t <= 0) continue;
        const double zhit = t * ray.z;
        const std::size_t pix = static_cast<std::size_t>(v) * depth.width + u;
        if (zhit < zbuf[pix]) {
          zbuf[pix] = zhit;
          const double mm = std::round(zhit * 1000.0);
          depth.depth_mm[pix] = static_cast<std::uint16_t>(std::clamp(mm, 1.0, 65535.0));
          rr.sidecar.instance_index[pix] =
              s < centers.size() - 1 ? static_cast<std::uint16_t>(s + 1) : 0;
        }
      }
    }
  }
  rr.sidecar.instance_count = static_cast<int>(centers.size()) - 1;

  for (int i = 0; i < rr.sidecar.instance_count; ++i) {
    const std::uint16_t tag = static_cast<std::uint16_t>(i + 1);
    if (std::find(rr.sidecar.instance_index.begin(), rr.sidecar.instance_index.end(), tag) !=
        rr.sidecar.instance_index.end())
      rr.visible_instances.push_back(i);
  }

  if (sample.record.head_box) {
    rr.head_box = *sample.record.head_box;
    rr.head_box.u_min = std::max(rr.head_box.u_min, 0);
    rr.head_box.v_min = std::max(rr.head_box.v_min, 0);
    rr.head_box.u_max = std::min(rr.head_box.u_max, depth.width - 1);
    rr.head_box.v_max = std::min(rr.head_box.v_max, depth.height - 1);
  }
  return rr;
}

}  // namespace gaze3d
