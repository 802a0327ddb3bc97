#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace zspose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Proper 3D rotation stored as a row-major 3x3 matrix.
///
/// The checked constructor rejects anything that is not orthonormal with
/// det = +1 to within 1e-6, so malformed rotations fail at the boundary.
class Rotation3 {
 public:
  static constexpr double kTolerance = 1e-6;

  Rotation3() : m_(Mat3::Identity()) {}
  explicit Rotation3(const Mat3& m);

  static Rotation3 identity() { return Rotation3(); }
  static Rotation3 from_axis_angle(const Vec3& axis, double angle);
  static Rotation3 rot_x(double angle) { return from_axis_angle(Vec3::UnitX(), angle); }
  static Rotation3 rot_y(double angle) { return from_axis_angle(Vec3::UnitY(), angle); }
  static Rotation3 rot_z(double angle) { return from_axis_angle(Vec3::UnitZ(), angle); }

  /// Nearest rotation in the Frobenius sense (SVD projection).
  static Rotation3 project(const Mat3& m);

  /// Policy for matrices read from disk: det within 1e-3 of +1 is repaired by
  /// projection, anything else throws SchemaError.
  static Rotation3 from_loaded(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  Rotation3 inverse() const { return Rotation3(m_.transpose(), Unchecked{}); }
  Rotation3 operator*(const Rotation3& other) const { return Rotation3(m_ * other.m_, Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  struct Unchecked {};
  Rotation3(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

/// World-to-view style rigid transform: x -> R x + t.
struct RigidTransformSE3 {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  RigidTransformSE3() = default;
  RigidTransformSE3(const Rotation3& r, const Vec3& t);

  static RigidTransformSE3 identity() { return {}; }
  static RigidTransformSE3 from_matrix(const Mat4& m);  // applies the from_loaded policy

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransformSE3 inverse() const;
  Mat4 matrix() const;
};

/// Similarity transform x -> scale * R x + t.
class RigidTransformSim3 {
 public:
  RigidTransformSim3() = default;
  RigidTransformSim3(const Rotation3& r, const Vec3& t, double scale);
  /* implicit */ RigidTransformSim3(const RigidTransformSE3& se3)
      : rotation_(se3.rotation), translation_(se3.translation), scale_(1.0) {}

  static RigidTransformSim3 identity() { return {}; }

  const Rotation3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  double scale() const { return scale_; }

  Vec3 apply(const Vec3& x) const { return scale_ * (rotation_ * x) + translation_; }
  Mat4 matrix() const;

 private:
  Rotation3 rotation_;
  Vec3 translation_ = Vec3::Zero();
  double scale_ = 1.0;
};

/// (a o b)(x) = a(b(x)).
RigidTransformSim3 compose(const RigidTransformSim3& a, const RigidTransformSim3& b);
RigidTransformSim3 invert(const RigidTransformSim3& t);
RigidTransformSE3 compose(const RigidTransformSE3& a, const RigidTransformSE3& b);

/// Angle of r1^T r2 in radians, in [0, pi].
double geodesic_rotation_error(const Rotation3& r1, const Rotation3& r2);

/// Ground-truth camera-frame relative pose from frame i of sequence a to
/// frame j of sequence b: cam_bj o t0b o t0a^-1 o cam_ai^-1.
RigidTransformSim3 relative_gt_pose(const RigidTransformSim3& t0a, const RigidTransformSim3& t0b,
                                    const RigidTransformSE3& cam_ai, const RigidTransformSE3& cam_bj);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
};

constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace zspose
