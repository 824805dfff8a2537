#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "thermap/grid.hpp"

namespace thermap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

/// Inverse depth bounds applied to every depth state.
inline constexpr double kMinInvDepth = 1e-4;
inline constexpr double kMaxInvDepth = 1e2;

Mat3 skew(const Vec3& v);

/// Rigid transform. Used world-from-camera for keyframe poses.
///
/// Tangent vectors are ordered (translation, rotation). `retract` applies a
/// left perturbation: T <- Exp(xi) * T.
struct SE3Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  SE3Pose() = default;
  SE3Pose(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}
  SE3Pose(const Mat3& r, const Vec3& t) : rotation(Quat(r).normalized()), translation(t) {}

  static SE3Pose identity() { return {}; }
  static SE3Pose exp(const Vec6& xi);
  Vec6 log() const;

  SE3Pose inverse() const;
  SE3Pose operator*(const SE3Pose& other) const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
  Mat4 matrix() const;
  SE3Pose retract(const Vec6& xi) const;
};

/// Similarity transform p -> scale * R * p + t.
struct Sim3Transform {
  double scale = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Sim3Transform inverse() const;
  /// Applies the similarity to a world-from-camera pose.
  SE3Pose apply(const SE3Pose& pose) const;
};

struct PinholeIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws ContractViolation unless fx, fy > 0 and the principal point lies
  /// inside the image.
  void validate() const;
  /// Intrinsics of the same camera sampled every `factor` pixels, so that grid
  /// pixel (u, v) coincides with full-resolution pixel (factor*u, factor*v).
  PinholeIntrinsics downscaled(int factor) const;
  bool contains(const Vec2& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() <= width - 1 && px.y() <= height - 1;
  }
};

/// Dense inverse depth with a validity mask. Lives at 1/8 image resolution.
struct InverseDepthMap {
  Grid<double> values;
  Mask valid;

  InverseDepthMap() = default;
  InverseDepthMap(int width, int height, double fill = 1.0)
      : values(width, height, fill), valid(width, height, 1) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }
  /// Clamps every valid entry into [kMinInvDepth, kMaxInvDepth].
  void clamp();
};

struct Projection {
  Vec2 pixel;
  double inv_depth;
};

/// Camera-frame point on the ray through `pixel` at the given inverse depth.
Vec3 backproject(const Vec2& pixel, double inv_depth, const PinholeIntrinsics& intr);
Projection project(const Vec3& point_cam, const PinholeIntrinsics& intr);

/// Correspondence field p_ij of every pixel of frame i in frame j.
struct ReprojectionField {
  Grid<Vec2> pixels;
  Mask valid;
};

ReprojectionField reproject(const InverseDepthMap& depth_i, const SE3Pose& pose_i,
                            const SE3Pose& pose_j, const PinholeIntrinsics& intr);

/// Least-squares similarity mapping src onto dst.
Sim3Transform sim3_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Sum of squared alignment residuals of `t` over the correspondences.
double alignment_residual(const Sim3Transform& t, std::span<const Vec3> src,
                          std::span<const Vec3> dst);

}  // namespace thermap
