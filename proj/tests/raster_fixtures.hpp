#pragma once

// Random Gaussian scenes and an independent per-pixel compositor, shared by
// the rasterizer tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "thermap/gs_raster.hpp"

namespace thermap::test {

inline PinholeIntrinsics raster_camera(int w = 40, int h = 32) {
  PinholeIntrinsics k;
  k.fx = k.fy = 36;
  k.cx = (w - 1) / 2.0;
  k.cy = (h - 1) / 2.0;
  k.width = w;
  k.height = h;
  return k;
}

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

// Gaussians in front of an identity camera, well inside the image so their
// footprints never touch the border.
inline GaussianMap random_scene(std::mt19937_64& rng, int count, const PinholeIntrinsics& k,
                         double max_opacity = 0.85) {
  std::uniform_real_distribution<double> u(0, 1);
  GaussianMap map;
  for (int i = 0; i < count; ++i) {
    Gaussian3D g;
    const double z = 2.0 + 2.0 * u(rng);
    const double px = k.width * (0.3 + 0.4 * u(rng));
    const double py = k.height * (0.3 + 0.4 * u(rng));
    g.mu = Vec3((px - k.cx) / k.fx * z, (py - k.cy) / k.fy * z, z);
    for (int a = 0; a < 3; ++a) g.log_scale(a) = std::log(0.05 + 0.12 * u(rng));
    g.rotation = random_quat(rng);
    g.opacity_logit = logit(0.2 + (max_opacity - 0.2) * u(rng));
    g.color = u(rng);
    map.add(g);
  }
  return map;
}

struct Weights {
  Grid<double> wi, wd, wa;
};

inline Weights random_weights(std::mt19937_64& rng, const PinholeIntrinsics& k) {
  std::uniform_real_distribution<double> u(-1, 1);
  Weights w{Grid<double>(k.width, k.height), Grid<double>(k.width, k.height), Grid<double>(k.width, k.height)};
  for (std::size_t i = 0; i < w.wi.size(); ++i) {
    w.wi[i] = u(rng);
    w.wd[i] = 0.1 * u(rng);
    w.wa[i] = u(rng);
  }
  return w;
}

inline double linear_objective(const GaussianMap& map, const SE3Pose& pose, const PinholeIntrinsics& k,
                        const Weights& w) {
  const RenderOutput out = render(map, pose, k);
  double f = 0;
  for (std::size_t i = 0; i < w.wi.size(); ++i) {
    f += w.wi[i] * out.intensity[i] + w.wd[i] * out.depth[i] + w.wa[i] * out.alpha[i];
  }
  return f;
}

// Independent compositing: every Gaussian is tested at every pixel, in depth
// order, with the covariance rebuilt from scratch.
struct BruteForce {
  GrayImage intensity;
  Grid<double> depth;
  Grid<double> alpha;
};

inline BruteForce brute_force_render(const GaussianMap& map, const SE3Pose& pose_wc, const PinholeIntrinsics& k) {
  struct Splat {
    double z;
    int index;
    Vec2 mean;
    Mat2 conic;
    double opacity;
    double color;
  };
  const SE3Pose t_cw = pose_wc.inverse();
  std::vector<Splat> splats;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const Gaussian3D& g = map.gaussians[i];
    const Mat3 r_cw = t_cw.rotation.toRotationMatrix();
    const Vec3 pc = r_cw * g.mu + t_cw.translation;
    if (pc.z() <= 0.01) continue;
    const Mat3 rg = g.rotation.normalized().toRotationMatrix();
    const Vec3 s2 = (2.0 * g.log_scale).array().exp();
    const Mat3 sigma = rg * s2.asDiagonal() * rg.transpose();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx / pc.z(), 0, -k.fx * pc.x() / (pc.z() * pc.z()), 0, k.fy / pc.z(), -k.fy * pc.y() / (pc.z() * pc.z());
    Mat2 cov = j * r_cw * sigma * r_cw.transpose() * j.transpose();
    cov += 0.3 * Mat2::Identity();
    const Vec2 mean(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    if (mean.x() < -0.5 * k.width || mean.x() > 1.5 * k.width || mean.y() < -0.5 * k.height ||
        mean.y() > 1.5 * k.height) {
      continue;
    }
    splats.push_back({pc.z(), static_cast<int>(i), mean, cov.inverse(), g.opacity(), g.color});
  }
  std::sort(splats.begin(), splats.end(),
            [](const Splat& a, const Splat& b) { return a.z != b.z ? a.z < b.z : a.index < b.index; });
  BruteForce out{GrayImage(k.width, k.height, 0.0), Grid<double>(k.width, k.height, 0.0),
                 Grid<double>(k.width, k.height, 0.0)};
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      double t = 1, c = 0, d = 0;
      for (const Splat& s : splats) {
        const Vec2 dp = Vec2(x, y) - s.mean;
        const double m = dp.dot(s.conic * dp);
        if (m >= 9) continue;
        double kernel = std::exp(-0.5 * m);
        if (m > 8) {
          const double u = m - 8;
          kernel *= 1 - u * u * u * (10 - 15 * u + 6 * u * u);
        }
        const double a = std::min(0.99, s.opacity * kernel);
        if (a <= 0) continue;
        if (t * (1 - a) < 1e-4) break;
        c += t * a * s.color;
        d += t * a * s.z;
        t *= 1 - a;
      }
      out.intensity(x, y) = c;
      out.depth(x, y) = d;
      out.alpha(x, y) = 1 - t;
    }
  }
  return out;
}

}  // namespace thermap::test
