#pragma once

#include "thermap/dataset_io.hpp"
#include "thermap/geometry.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

struct AteResult {
  double rmse = 0;
  Sim3Transform alignment;  // maps estimate onto reference
  int pairs = 0;
};

/// Nearest-timestamp association within max_dt, Sim(3) alignment of the
/// estimate onto the reference, RMSE of translation residuals.
/// Throws InsufficientOverlapError with fewer than three pairs.
AteResult ate(const Trajectory& est, const Trajectory& ref, double max_dt = 0.02);
double ate_rmse(const Trajectory& est, const Trajectory& ref, double max_dt = 0.02);

inline constexpr double kPsnrCap = 100.0;

double psnr(const GrayImage& a, const GrayImage& b);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5).
double ssim(const GrayImage& a, const GrayImage& b);

struct SsimGradient {
  double value = 0;
  Grid<double> grad_a;  // d SSIM / d a
};

SsimGradient ssim_with_gradient(const GrayImage& a, const GrayImage& b);

}  // namespace thermap
