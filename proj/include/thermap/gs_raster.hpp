#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "thermap/geometry.hpp"
#include "thermap/gs_map.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

inline constexpr int kTileSize = 16;
inline constexpr double kScreenDilation = 0.3;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
/// Squared Mahalanobis radius of the footprint (3 sigma) and the start of
/// the fade that brings the kernel smoothly to zero there.
inline constexpr double kFootprintT = 9.0;
inline constexpr double kFadeStartT = 8.0;
/// Projected centers beyond this fraction of the image size outside the border are culled.
inline constexpr double kGuardBand = 0.5;

struct Gaussian2D {
  Vec2 mean;
  Mat2 cov;    // dilated
  Mat2 conic;  // inverse of cov
  Vec2 radius;  // half extents of the footprint box
  double z = 0;
  double color = 0;
  double opacity = 0;
  int index = -1;  // parent in the map
  // Kept for the backward pass.
  Vec3 pc;
  Eigen::Matrix<double, 2, 3> jac;
  Mat3 cov_cam;  // W Sigma W^T
};

/// Projects with camera-from-world `t_cw`. Returns nothing when culled.
std::optional<Gaussian2D> project_gaussian(const Gaussian3D& g, const SE3Pose& t_cw,
                                           const PinholeIntrinsics& intr, int index = -1);

/// Unit-opacity kernel value at squared Mahalanobis distance t, and its
/// derivative: exp(-t/2) faded to zero over [kFadeStartT, kFootprintT].
double footprint(double t, double* dfdt = nullptr);

/// Blending weight of g at pixel p before the 0.99 cap.
double gaussian_alpha(const Gaussian2D& g, const Vec2& p);

struct RenderOutput {
  GrayImage intensity;
  Grid<double> depth;
  Grid<double> alpha;

  // Compositing tape.
  std::uint64_t map_version = 0;
  std::size_t map_size = 0;
  std::vector<Gaussian2D> projected;  // sorted front to back
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> tile_lists;  // indices into projected
  Grid<int> n_contrib;                       // list entries visited per pixel
  Grid<double> final_t;
  std::vector<std::uint8_t> contributed;     // per map Gaussian
};

/// Renders from world-from-camera `pose`.
RenderOutput render(const GaussianMap& map, const SE3Pose& pose, const PinholeIntrinsics& intr);

struct GradientBundle {
  std::vector<GaussianParams> grads;  // per map Gaussian, in parameter order
  std::vector<Vec2> mean2d;           // signed dL/d mu' (pixels)
  std::vector<Vec2> abs_mean2d;       // sum over pixels of |dL/d mu'|
  std::vector<int> visible;           // 1 if rendered in this view
};

/// Chain rule from per-pixel gradients back to Gaussian parameters.
/// `d_alpha` may be empty.
GradientBundle backward(const RenderOutput& tape, const GaussianMap& map, const SE3Pose& pose,
                        const PinholeIntrinsics& intr, const Grid<double>& d_intensity,
                        const Grid<double>& d_depth, const Grid<double>& d_alpha = {});

/// Adds AbsGS statistics from one backward pass, converted to NDC units.
void accumulate_stats(GaussianMap& map, const GradientBundle& grads, const PinholeIntrinsics& intr);

struct LossWeights {
  double alpha = 0.2;  // SSIM share
  double beta = 0.2;   // depth weight
};

struct LossTerms {
  double color = 0;  // mean |I - target|
  double ssim = 0;   // 1 - SSIM
  double depth = 0;  // masked mean |D - proxy|
  double total = 0;
};

double combine_loss(double color, double ssim_term, double depth, const LossWeights& w);

struct LossResult {
  LossTerms terms;
  Grid<double> d_intensity;
  Grid<double> d_depth;
};

/// `proxy_inv_depth` is the full-resolution proxy inverse depth; the depth
/// term compares z-depths over pixels with alpha > 0.5.
LossResult loss(const RenderOutput& render, const GrayImage& target, const Grid<double>& proxy_inv_depth,
                const LossWeights& weights = {});

}  // namespace thermap
