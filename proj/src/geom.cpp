#include "gaze3d/geom.hpp"

#include <algorithm>
#include <cmath>

namespace gaze3d {

double Rotation3::orthonormality_defect() const {
  const auto& m = m_;
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += m[k * 3 + i] * m[k * 3 + j];
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

double Rotation3::determinant() const {
  const auto& m = m_;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Vec3 backproject(double u, double v, double depth, const CameraIntrinsics& K) {
  if (!K.valid()) throw domain_error("backproject: invalid intrinsics");
  if (!(depth > 0.0) || !std::isfinite(depth)) throw domain_error("backproject: depth must be positive");
  return {(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth};
}

Rotation3 euler_xyz(double theta, double phi, double psi) {
  if (!std::isfinite(theta) || !std::isfinite(phi) || !std::isfinite(psi))
    throw domain_error("euler_xyz: non-finite angle");
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(phi), sp = std::sin(phi);
  const double cs = std::cos(psi), ss = std::sin(psi);
  const Rotation3 rx({1, 0, 0, 0, ct, -st, 0, st, ct});
  const Rotation3 ry({cp, 0, sp, 0, 1, 0, -sp, 0, cp});
  const Rotation3 rz({cs, -ss, 0, ss, cs, 0, 0, 0, 1});
  return rx * ry * rz;
}

EulerXyz decompose_euler_xyz(const Rotation3& R) {
  // R = Rx(theta) Ry(phi) Rz(psi):
  //   R02 = sin(phi)
  //   R00 = cos(phi) cos(psi),  R01 = -cos(phi) sin(psi)
  //   R12 = -sin(theta) cos(phi),  R22 = cos(theta) cos(phi)
  // Two algebraic branches exist (phi and pi - phi, with cos(phi) of either
  // sign); report the one with the smaller |psi| so a matrix built as
  // Rx * Ry decomposes with psi = 0 for every view direction.
  EulerXyz e;
  const double sp = std::clamp(R(0, 2), -1.0, 1.0);
  const double phi1 = std::asin(sp);
  const double cp = std::cos(phi1);
  if (std::abs(cp) < 1e-9) {
    // gimbal lock: only theta +- psi is observable; report psi = 0
    e.degenerate = true;
    e.psi = 0.0;
    e.phi = phi1;
    e.theta = std::atan2(R(2, 1), R(1, 1));
    return e;
  }
  const double psi1 = std::atan2(-R(0, 1), R(0, 0));
  const double psi2 = std::atan2(R(0, 1), -R(0, 0));
  if (std::abs(psi1) <= std::abs(psi2)) {
    e.phi = phi1;
    e.theta = std::atan2(-R(1, 2), R(2, 2));
    e.psi = psi1;
  } else {
    e.phi = phi1 >= 0.0 ? M_PI - phi1 : -M_PI - phi1;
    e.theta = std::atan2(R(1, 2), -R(2, 2));
    e.psi = psi2;
  }
  return e;
}

double decompose_euler_z(const Rotation3& R) { return decompose_euler_xyz(R).psi; }

Rotation3 axis_angle_alignment(const UnitVec3& v) {
  const Vec3 z{0.0, 0.0, 1.0};
  const Vec3 axis_raw = v.vec().cross(z);
  const double axis_norm = axis_raw.norm();
  if (axis_norm <= 1e-9)
    throw degenerate_error("axis_angle_alignment: view direction parallel to +z, axis undefined");
  const Vec3 a = axis_raw * (1.0 / axis_norm);
  const double eta = std::acos(std::clamp(v.dot(UnitVec3::plus_z()), -1.0, 1.0));
  const double c = std::cos(eta), s = std::sin(eta), t = 1.0 - c;
  return Rotation3({c + a.x * a.x * t,       a.x * a.y * t - a.z * s,  a.x * a.z * t + a.y * s,
                    a.y * a.x * t + a.z * s, c + a.y * a.y * t,        a.y * a.z * t - a.x * s,
                    a.z * a.x * t - a.y * s, a.z * a.y * t + a.x * s,  c + a.z * a.z * t});
}

CyclotorsionAngles cyclotorsionAngles_impl(const UnitVec3& v) {
  CyclotorsionAngles a;
  // -0.0 would flip atan2 onto the -pi branch; the canonical output for
  // v = (0, 0, -1) is phi = +pi, theta = 0
  const double neg_x = v.x() == 0.0 ? 0.0 : -v.x();
  a.phi = std::atan2(neg_x, v.z());
  a.theta = std::atan2(v.y(), v.z() * std::cos(a.phi) - v.x() * std::sin(a.phi));
  return a;
}

CyclotorsionAngles cyclotorsion_angles(const UnitVec3& v) { return cyclotorsionAngles_impl(v); }

Rotation3 cyclotorsion_alignment(const UnitVec3& v) {
  const CyclotorsionAngles a = cyclotorsionAngles_impl(v);
  return euler_xyz(a.theta, a.phi, 0.0);
}

const char* to_string(RotationMode m) {
  switch (m) {
    case RotationMode::kCyclotorsion: return "cyclotorsion";
    case RotationMode::kAxisAngle: return "axis-angle";
    case RotationMode::kIdentity: return "identity";
  }
  return "?";
}

std::optional<RotationMode> rotation_mode_from_string(const std::string& s) {
  if (s == "cyclotorsion") return RotationMode::kCyclotorsion;
  if (s == "axis-angle" || s == "axis_angle") return RotationMode::kAxisAngle;
  if (s == "identity") return RotationMode::kIdentity;
  return std::nullopt;
}

Rotation3 view_alignment(const UnitVec3& v, RotationMode mode) {
  switch (mode) {
    case RotationMode::kIdentity:
      return Rotation3::identity();
    case RotationMode::kCyclotorsion:
      return cyclotorsion_alignment(v);
    case RotationMode::kAxisAngle:
      if (v.vec().cross(Vec3{0, 0, 1}).norm() <= 1e-9) {
        if (v.z() > 0.0) return Rotation3::identity();  // already aligned
        throw degenerate_error("axis_angle_alignment: view direction antiparallel to +z");
      }
      return axis_angle_alignment(v);
  }
  throw domain_error("view_alignment: unknown mode");
}

EgoContext egocentric_transform(const UnitVec3& v, const std::vector<Vec3>& pose,
                                const std::vector<Vec3>& objects, const Vec3& t_pose,
                                const Vec3& t_object, double scale, RotationMode mode) {
  if (!(scale > 0.0)) throw domain_error("egocentric_transform: scale must be positive");
  if (pose.empty()) throw domain_error("egocentric_transform: pose keypoints required");

  EgoContext ego;
  ego.rotation = view_alignment(v, mode);
  ego.view_dir = ego.rotation.apply(v);
  ego.t_pose = t_pose;
  ego.t_object = t_object;
  ego.scale = scale;
  ego.mode = mode;
  ego.pose.reserve(pose.size());
  for (const Vec3& p : pose) ego.pose.push_back(ego.rotation.apply(p - t_pose) * scale);
  ego.objects.reserve(objects.size());
  for (const Vec3& p : objects) ego.objects.push_back(ego.rotation.apply(p - t_object));
  return ego;
}

InvertedContext invert_egocentric(const EgoContext& ego) {
  InvertedContext out{ego.rotation.transposed().apply(ego.view_dir), {}, {}};
  const Rotation3 rt = ego.rotation.transposed();
  out.pose.reserve(ego.pose.size());
  for (const Vec3& p : ego.pose) out.pose.push_back(rt.apply(p * (1.0 / ego.scale)) + ego.t_pose);
  out.objects.reserve(ego.objects.size());
  for (const Vec3& p : ego.objects) out.objects.push_back(rt.apply(p) + ego.t_object);
  return out;
}

UnitVec3 invert_gaze(const Vec3& gaze_residual, const Rotation3& R, const UnitVec3& v) {
  const Vec3 g = R.transposed().apply(gaze_residual) + v.vec();
  if (g.norm() <= 1e-6)
    throw degenerate_error("invert_gaze: residual cancels the view prior");
  return UnitVec3(g);
}

double angular_error(const UnitVec3& g, const UnitVec3& g_gt) {
  const double d = std::clamp(g.dot(g_gt), -1.0 + kAngleClampEpsilon, 1.0 - kAngleClampEpsilon);
  return std::acos(d);
}

std::optional<double> angular_error_2d(const UnitVec3& g, const UnitVec3& g_gt) {
  const double na = std::hypot(g.x(), g.y());
  const double nb = std::hypot(g_gt.x(), g_gt.y());
  if (na < 1e-6 || nb < 1e-6) return std::nullopt;
  const double d = std::clamp((g.x() * g_gt.x() + g.y() * g_gt.y()) / (na * nb),
                              -1.0 + kAngleClampEpsilon, 1.0 - kAngleClampEpsilon);
  return std::acos(d);
}

}  // namespace gaze3d
