#pragma once

// Core 3D geometry: vectors, SO(3) rotations, pinhole backprojection, the two
// view-alignment schemes (cyclotorsion and axis-angle), the egocentric
// transformation and its inverse, and angular error metrics.
//
// All geometry runs in double precision. Directions are unit vectors on S2,
// rotations are orthonormal 3x3 matrices with determinant +1.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gaze3d/error.hpp"

namespace gaze3d {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Unit direction on S2. Construction normalizes; a near-zero input is a
// domain error.
class UnitVec3 {
 public:
  UnitVec3() : v_{0.0, 0.0, 1.0} {}
  explicit UnitVec3(const Vec3& v) {
    const double n = v.norm();
    if (!(n > 1e-12) || !v.finite()) throw domain_error("UnitVec3: cannot normalize near-zero or non-finite vector");
    v_ = {v.x / n, v.y / n, v.z / n};
  }
  UnitVec3(double x, double y, double z) : UnitVec3(Vec3{x, y, z}) {}

  const Vec3& vec() const { return v_; }
  double x() const { return v_.x; }
  double y() const { return v_.y; }
  double z() const { return v_.z; }
  double dot(const UnitVec3& o) const { return v_.dot(o.v_); }

  static UnitVec3 plus_z() { return UnitVec3(); }

  // Accepts components already unit to within `tol` and stores them without
  // renormalization, so serialized directions rehydrate bit for bit.
  static UnitVec3 from_unit(const Vec3& v, double tol = 1e-6) {
    if (!v.finite() || std::abs(v.norm() - 1.0) > tol)
      throw domain_error("UnitVec3::from_unit: vector is not unit length within tolerance");
    UnitVec3 u;
    u.v_ = v;
    return u;
  }

 private:
  Vec3 v_;
};

// Rotation matrix in SO(3), row-major.
class Rotation3 {
 public:
  Rotation3() : m_{{1, 0, 0, 0, 1, 0, 0, 0, 1}} {}
  explicit Rotation3(const std::array<double, 9>& m) : m_(m) {}

  static Rotation3 identity() { return Rotation3(); }

  double operator()(int r, int c) const { return m_[r * 3 + c]; }

  Vec3 apply(const Vec3& v) const {
    return {m_[0] * v.x + m_[1] * v.y + m_[2] * v.z,
            m_[3] * v.x + m_[4] * v.y + m_[5] * v.z,
            m_[6] * v.x + m_[7] * v.y + m_[8] * v.z};
  }
  // rotations preserve length; skipping renormalization keeps the identity
  // rotation bitwise transparent
  UnitVec3 apply(const UnitVec3& v) const { return UnitVec3::from_unit(apply(v.vec()), 1e-9); }

  Rotation3 transposed() const {
    return Rotation3({m_[0], m_[3], m_[6], m_[1], m_[4], m_[7], m_[2], m_[5], m_[8]});
  }

  Rotation3 operator*(const Rotation3& o) const {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m_[i * 3 + k] * o.m_[k * 3 + j];
        r[i * 3 + j] = s;
      }
    return Rotation3(r);
  }

  // max |R^T R - I| entry; 0 for an exact rotation
  double orthonormality_defect() const;
  double determinant() const;

  const std::array<double, 9>& data() const { return m_; }

 private:
  std::array<double, 9> m_;
};

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels

  bool valid() const { return fx > 0.0 && fy > 0.0 && std::isfinite(cx) && std::isfinite(cy); }
};

// Pinhole backprojection of pixel (u, v) at the given depth (meters, > 0).
Vec3 backproject(double u, double v, double depth, const CameraIntrinsics& K);

// Intrinsic x-y-z Euler composition R = Rx(theta) * Ry(phi) * Rz(psi).
Rotation3 euler_xyz(double theta, double phi, double psi);

// Intrinsic x-y-z Euler decomposition. `degenerate` marks gimbal lock
// (|cos phi| ~ 0), where psi is reported as 0 by convention.
struct EulerXyz {
  double theta = 0.0;
  double phi = 0.0;
  double psi = 0.0;
  bool degenerate = false;
};
EulerXyz decompose_euler_xyz(const Rotation3& R);
double decompose_euler_z(const Rotation3& R);

// Rotation aligning v to +z about the axis v x z (Rodrigues). Throws
// degenerate_error when v is within 1e-9 of +-z; for v ~ +z callers
// substitute the identity.
Rotation3 axis_angle_alignment(const UnitVec3& v);

// Rotation R = Rx(theta) * Ry(phi) aligning v to +z with zero Euler-z
// component. Total for all unit v: v = (0,0,-1) yields phi = pi, theta = 0,
// and v = (0,+-1,0) falls through to the theta-only branch.
Rotation3 cyclotorsion_alignment(const UnitVec3& v);

// Closed-form angles behind cyclotorsion_alignment.
struct CyclotorsionAngles {
  double theta = 0.0;
  double phi = 0.0;
};
CyclotorsionAngles cyclotorsion_angles(const UnitVec3& v);

enum class RotationMode { kCyclotorsion, kAxisAngle, kIdentity };

const char* to_string(RotationMode m);
std::optional<RotationMode> rotation_mode_from_string(const std::string& s);

// Rotation used by the egocentric transform for a given mode. The axis-angle
// path substitutes the identity for v ~ +z and raises degenerate_error for
// v ~ -z.
Rotation3 view_alignment(const UnitVec3& v, RotationMode mode);

// Normalized egocentric context together with everything needed to invert it.
struct EgoContext {
  UnitVec3 view_dir;                // v' = R v
  std::vector<Vec3> pose;           // s R (P_pose - t_pose)
  std::vector<Vec3> objects;        // R (P_object - t_object)
  Rotation3 rotation;               // R
  Vec3 t_pose;
  Vec3 t_object;
  double scale = 1.0;               // s
  RotationMode mode = RotationMode::kCyclotorsion;
};

EgoContext egocentric_transform(const UnitVec3& v, const std::vector<Vec3>& pose,
                                const std::vector<Vec3>& objects, const Vec3& t_pose,
                                const Vec3& t_object, double scale, RotationMode mode);

// Inverse of egocentric_transform using the stored R, t, s.
struct InvertedContext {
  UnitVec3 view_dir;
  std::vector<Vec3> pose;
  std::vector<Vec3> objects;
};
InvertedContext invert_egocentric(const EgoContext& ego);

// g = normalize(R^T g' + v). Throws degenerate_error when the sum has norm
// <= 1e-6 (inference falls back to v).
UnitVec3 invert_gaze(const Vec3& gaze_residual, const Rotation3& R, const UnitVec3& v);

// arccos of the clamped dot product; clamp epsilon shared with the loss.
inline constexpr double kAngleClampEpsilon = 1e-7;
double angular_error(const UnitVec3& g, const UnitVec3& g_gt);

// Angle between the xy-projections; empty when either projection has norm
// < 1e-6 (the 2D metric skips such samples).
std::optional<double> angular_error_2d(const UnitVec3& g, const UnitVec3& g_gt);

inline double degrees(double radians) { return radians * (180.0 / M_PI); }
inline double radians(double degrees) { return degrees * (M_PI / 180.0); }

}  // namespace gaze3d
