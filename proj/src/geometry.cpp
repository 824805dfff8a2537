#include "thermap/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "thermap/errors.hpp"

namespace thermap {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

SE3Pose SE3Pose::exp(const Vec6& xi) {
  const Vec3 v = xi.head<3>();
  const Vec3 w = xi.tail<3>();
  const double theta = w.norm();
  const Mat3 W = skew(w);
  Mat3 V;
  Quat q;
  if (theta < 1e-8) {
    V = Mat3::Identity() + 0.5 * W + W * W / 6.0;
    q = Quat(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
  } else {
    const double t2 = theta * theta;
    V = Mat3::Identity() + (1 - std::cos(theta)) / t2 * W +
        (theta - std::sin(theta)) / (t2 * theta) * W * W;
    q = Quat(Eigen::AngleAxisd(theta, w / theta));
  }
  return SE3Pose(q.normalized(), V * v);
}

Vec6 SE3Pose::log() const {
  Eigen::AngleAxisd aa(rotation);
  double theta = aa.angle();
  Vec3 axis = aa.axis();
  if (theta > M_PI) {
    theta = 2 * M_PI - theta;
    axis = -axis;
  }
  const Vec3 w = theta * axis;
  const Mat3 W = skew(w);
  Mat3 v_inv;
  if (theta < 1e-8) {
    v_inv = Mat3::Identity() - 0.5 * W + W * W / 12.0;
  } else {
    const double half = 0.5 * theta;
    v_inv = Mat3::Identity() - 0.5 * W +
            (1 - half * std::cos(half) / std::sin(half)) / (theta * theta) * W * W;
  }
  Vec6 xi;
  xi.head<3>() = v_inv * translation;
  xi.tail<3>() = w;
  return xi;
}

SE3Pose SE3Pose::inverse() const {
  const Quat qi = rotation.conjugate();
  return SE3Pose(qi, -(qi * translation));
}

SE3Pose SE3Pose::operator*(const SE3Pose& other) const {
  return SE3Pose(rotation * other.rotation, rotation * other.translation + translation);
}

Mat4 SE3Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

SE3Pose SE3Pose::retract(const Vec6& xi) const { return exp(xi) * *this; }

Sim3Transform Sim3Transform::inverse() const {
  Sim3Transform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation) / scale;
  return inv;
}

SE3Pose Sim3Transform::apply(const SE3Pose& pose) const {
  return SE3Pose(rotation * pose.rotation, apply(pose.translation));
}

void PinholeIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw ContractViolation("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ContractViolation("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw ContractViolation("intrinsics: principal point outside the image");
  }
}

PinholeIntrinsics PinholeIntrinsics::downscaled(int factor) const {
  const double s = 1.0 / factor;
  return {fx * s, fy * s, cx * s, cy * s, width / factor, height / factor};
}

void InverseDepthMap::clamp() {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (valid[i]) values[i] = std::clamp(values[i], kMinInvDepth, kMaxInvDepth);
  }
}

Vec3 backproject(const Vec2& pixel, double inv_depth, const PinholeIntrinsics& intr) {
  if (!(inv_depth >= kMinInvDepth && inv_depth <= kMaxInvDepth)) {
    throw InvalidDepthError("backproject: inverse depth " + std::to_string(inv_depth) +
                            " outside [1e-4, 1e2]");
  }
  if (!intr.contains(pixel)) throw ContractViolation("backproject: pixel outside image");
  return Vec3((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0) / inv_depth;
}

Projection project(const Vec3& point_cam, const PinholeIntrinsics& intr) {
  if (!(point_cam.z() > 1e-8)) throw BehindCameraError("project: point behind camera");
  const double iz = 1.0 / point_cam.z();
  return {Vec2(intr.fx * point_cam.x() * iz + intr.cx, intr.fy * point_cam.y() * iz + intr.cy),
          iz};
}

ReprojectionField reproject(const InverseDepthMap& depth_i, const SE3Pose& pose_i,
                            const SE3Pose& pose_j, const PinholeIntrinsics& intr) {
  const SE3Pose t_ji = pose_j.inverse() * pose_i;
  const Mat3 r = t_ji.rotation_matrix();
  ReprojectionField out{Grid<Vec2>(depth_i.width(), depth_i.height(), Vec2::Zero()),
                        Mask(depth_i.width(), depth_i.height(), 0)};
  for (int y = 0; y < depth_i.height(); ++y) {
    for (int x = 0; x < depth_i.width(); ++x) {
      if (!depth_i.is_valid(x, y)) continue;
      const double d = depth_i.values(x, y);
      if (!(d >= kMinInvDepth && d <= kMaxInvDepth)) continue;
      const Vec3 pc = r * backproject(Vec2(x, y), d, intr) + t_ji.translation;
      if (!(pc.z() > 1e-8)) continue;
      const Vec2 px = project(pc, intr).pixel;
      out.pixels(x, y) = px;
      out.valid(x, y) = intr.contains(px) ? 1 : 0;
    }
  }
  return out;
}

Sim3Transform sim3_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw ContractViolation("sim3_umeyama: size mismatch");
  const std::size_t n = src.size();
  if (n < 3) throw DegenerateConfigurationError("sim3_umeyama: fewer than 3 correspondences");

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mu_s += src[k];
    mu_d += dst[k];
  }
  mu_s /= double(n);
  mu_d /= double(n);

  Mat3 cov = Mat3::Zero();
  double var_s = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 a = src[k] - mu_s;
    cov += (dst[k] - mu_d) * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= double(n);
  var_s /= double(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (var_s <= 0 || sv(0) <= 0 || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateConfigurationError("sim3_umeyama: rank-deficient covariance");
  }
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;
  const Mat3 rot = svd.matrixU() * s * svd.matrixV().transpose();

  Sim3Transform out;
  out.scale = (sv.asDiagonal() * s).trace() / var_s;
  out.rotation = Quat(rot).normalized();
  out.translation = mu_d - out.scale * (rot * mu_s);
  return out;
}

double alignment_residual(const Sim3Transform& t, std::span<const Vec3> src,
                          std::span<const Vec3> dst) {
  double sum = 0;
  for (std::size_t k = 0; k < src.size(); ++k) sum += (dst[k] - t.apply(src[k])).squaredNorm();
  return sum;
}

}  // namespace thermap
