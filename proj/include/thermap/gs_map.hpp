#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "thermap/geometry.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

/// Optimizer-facing parameter layout of one Gaussian.
inline constexpr int kGaussianParams = 12;
using GaussianParams = Eigen::Matrix<double, kGaussianParams, 1>;
enum ParamOffset : int { kPosition = 0, kLogScale = 3, kRotation = 6, kOpacity = 10, kColor = 11 };

struct Gaussian3D {
  Vec3 mu = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Quat rotation = Quat::Identity();
  double opacity_logit = 0.0;
  double color = 0.0;  // grayscale
  int created_at = 0;  // keyframe id
  int observations = 0;

  double opacity() const;
  Vec3 scale() const { return log_scale.array().exp(); }
  GaussianParams params() const;
  /// Sets parameters, renormalizing the quaternion.
  void set_params(const GaussianParams& p);
};

double sigmoid(double x);
double logit(double p);

/// R S S^T R^T with S = diag(exp(log_scale)).
Mat3 world_covariance(const Gaussian3D& g);

struct GaussianStats {
  double abs_grad_sum = 0;  // summed norm of absolute screen-space gradients
  int count = 0;
};

struct GaussianMap {
  std::vector<Gaussian3D> gaussians;
  std::vector<GaussianStats> stats;
  std::vector<GaussianParams> adam_m;
  std::vector<GaussianParams> adam_v;
  std::uint64_t version = 0;  // bumped on every change

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
  void add(const Gaussian3D& g);
  void add(const std::vector<Gaussian3D>& gs);
  /// Keeps entries with keep[i] != 0, preserving order.
  void filter(const std::vector<std::uint8_t>& keep);
  void reset_stats();
  /// Throws ContractViolation when side arrays disagree in length.
  void check() const;
};

struct DensifyConfig {
  double grad_threshold = 0.0008;
  double scale_split_threshold = 0.01;  // world units; 1% of the scene extent
  double split_factor = 1.6;
  double opacity_prune = 0.05;
  int min_observations = 3;
  int interval = 100;
  double extent_prune_scale = 0.1;  // world units; 10% of the scene extent
};

/// Isotropic Gaussians back-projected from every stride-th pixel using the
/// full-resolution inverse depth. Pixels with covered[p] != 0 are skipped.
std::vector<Gaussian3D> spawn_from_keyframe(const SE3Pose& pose, const GrayImage& image,
                                            const Grid<double>& inv_depth,
                                            const PinholeIntrinsics& intr, int stride,
                                            int keyframe_id, const Mask* covered = nullptr);

struct DensifyResult {
  int cloned = 0;
  int split = 0;
};

/// AbsGS-style densification on the mean accumulated gradient. Resets stats.
DensifyResult densify(GaussianMap& map, const DensifyConfig& cfg, std::uint64_t seed);

/// Removes transparent Gaussians, large faint ones, and those older than
/// min_observations keyframes that were seen by fewer keyframes than that.
int prune(GaussianMap& map, const DensifyConfig& cfg, int current_kf_id);

/// Bumps the observation count of every Gaussian with a nonzero blending
/// weight in one rendered keyframe.
void update_observations(GaussianMap& map, const std::vector<std::uint8_t>& contributed);

}  // namespace thermap
