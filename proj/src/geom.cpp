#include "zspose/geom.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>

#include "zspose/error.hpp"

namespace zspose {

namespace {

bool all_finite(const Mat3& m) { return m.allFinite(); }

}  // namespace

Rotation3::Rotation3(const Mat3& m) : m_(m) {
  if (!all_finite(m)) throw Error(ErrorCode::InvalidArgument, "rotation has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (ortho > kTolerance || std::abs(det - 1.0) > kTolerance) {
    throw Error(ErrorCode::InvalidArgument,
                "matrix is not a proper rotation (orthonormality error " + std::to_string(ortho) +
                    ", det " + std::to_string(det) + ")");
  }
}

Rotation3 Rotation3::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0) || !std::isfinite(angle)) {
    throw Error(ErrorCode::InvalidArgument, "axis-angle needs a non-zero axis and finite angle");
  }
  return Rotation3(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix(), Unchecked{});
}

Rotation3 Rotation3::project(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return Rotation3(svd.matrixU() * d * svd.matrixV().transpose(), Unchecked{});
}

Rotation3 Rotation3::from_loaded(const Mat3& m) {
  if (!all_finite(m)) throw Error(ErrorCode::SchemaError, "rotation has non-finite entries");
  const double det = m.determinant();
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (std::abs(det - 1.0) > 1e-3 || ortho > 1e-3) {
    throw Error(ErrorCode::SchemaError,
                "rotation is not orthonormal with det +1 (det " + std::to_string(det) + ")");
  }
  return project(m);
}

RigidTransformSE3::RigidTransformSE3(const Rotation3& r, const Vec3& t) : rotation(r), translation(t) {
  if (!t.allFinite()) throw Error(ErrorCode::InvalidArgument, "translation is not finite");
}

RigidTransformSE3 RigidTransformSE3::from_matrix(const Mat4& m) {
  if (!m.allFinite()) throw Error(ErrorCode::SchemaError, "transform has non-finite entries");
  const Eigen::RowVector4d last = m.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-6) {
    throw Error(ErrorCode::SchemaError, "homogeneous transform must end in [0 0 0 1]");
  }
  return RigidTransformSE3(Rotation3::from_loaded(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>());
}

RigidTransformSE3 RigidTransformSE3::inverse() const {
  const Rotation3 rt = rotation.inverse();
  return RigidTransformSE3(rt, -(rt * translation));
}

Mat4 RigidTransformSE3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransformSim3::RigidTransformSim3(const Rotation3& r, const Vec3& t, double scale)
    : rotation_(r), translation_(t), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::InvalidArgument, "Sim3 scale must be positive and finite");
  }
  if (!t.allFinite()) throw Error(ErrorCode::InvalidArgument, "translation is not finite");
}

Mat4 RigidTransformSim3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = scale_ * rotation_.matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransformSim3 compose(const RigidTransformSim3& a, const RigidTransformSim3& b) {
  return RigidTransformSim3(a.rotation() * b.rotation(),
                            a.scale() * (a.rotation() * b.translation()) + a.translation(),
                            a.scale() * b.scale());
}

RigidTransformSim3 invert(const RigidTransformSim3& t) {
  const Rotation3 rt = t.rotation().inverse();
  const double inv_s = 1.0 / t.scale();
  return RigidTransformSim3(rt, -inv_s * (rt * t.translation()), inv_s);
}

RigidTransformSE3 compose(const RigidTransformSE3& a, const RigidTransformSE3& b) {
  return RigidTransformSE3(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

double geodesic_rotation_error(const Rotation3& r1, const Rotation3& r2) {
  // atan2 form: acos of the trace loses half the digits near zero.
  const Mat3 m = r1.matrix().transpose() * r2.matrix();
  const double c = (m.trace() - 1.0) / 2.0;
  const double s = Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)).norm() / 2.0;
  return std::atan2(s, c);
}

RigidTransformSim3 relative_gt_pose(const RigidTransformSim3& t0a, const RigidTransformSim3& t0b,
                                    const RigidTransformSE3& cam_ai, const RigidTransformSE3& cam_bj) {
  const RigidTransformSim3 ai_inv = cam_ai.inverse();
  return compose(RigidTransformSim3(cam_bj), compose(t0b, compose(invert(t0a), ai_inv)));
}

void CameraIntrinsics::validate() const {
  const bool ok = std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0 && width > 0 &&
                  height > 0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height;
  if (!ok) throw Error(ErrorCode::InvalidArgument, "camera intrinsics violate fx,fy > 0 or principal point bounds");
}

}  // namespace zspose
