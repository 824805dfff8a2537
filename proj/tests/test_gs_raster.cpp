#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "raster_fixtures.hpp"
#include "thermap/errors.hpp"
#include "thermap/gs_raster.hpp"

using namespace thermap;
using namespace thermap::test;

TEST(Footprint, SmoothFadeToZero) {
  double d = 0;
  EXPECT_DOUBLE_EQ(footprint(0, &d), 1.0);
  EXPECT_DOUBLE_EQ(d, -0.5);
  EXPECT_EQ(footprint(9.0), 0.0);
  EXPECT_EQ(footprint(12.0), 0.0);
  // value and slope continuous at both ends of the fade
  double d_lo = 0, d_hi = 0;
  EXPECT_NEAR(footprint(8 - 1e-9, &d_lo), footprint(8 + 1e-9, &d_hi), 1e-9);
  EXPECT_NEAR(d_lo, d_hi, 1e-6);
  footprint(9 - 1e-9, &d_lo);
  EXPECT_NEAR(d_lo, 0.0, 1e-9);
  for (double t : {0.5, 3.0, 8.3, 8.7}) {
    double an = 0;
    footprint(t, &an);
    const double fd = (footprint(t + 1e-6) - footprint(t - 1e-6)) / 2e-6;
    EXPECT_NEAR(an, fd, 1e-7) << t;
  }
}

TEST(ProjectGaussian, CullsBehindAndOutside) {
  const PinholeIntrinsics k = raster_camera();
  Gaussian3D g;
  g.log_scale.setConstant(std::log(0.1));
  g.mu = Vec3(0, 0, -1);
  EXPECT_FALSE(project_gaussian(g, SE3Pose::identity(), k));
  g.mu = Vec3(0, 0, 0.005);
  EXPECT_FALSE(project_gaussian(g, SE3Pose::identity(), k));
  g.mu = Vec3(50, 0, 1);
  EXPECT_FALSE(project_gaussian(g, SE3Pose::identity(), k));
  g.mu = Vec3(0, 0, 2);
  const auto p = project_gaussian(g, SE3Pose::identity(), k);
  ASSERT_TRUE(p);
  EXPECT_NEAR(p->mean.x(), k.cx, 1e-12);
  EXPECT_NEAR(p->z, 2.0, 1e-12);
  // isotropic: sigma' = (f s / z)^2 + 0.3
  const double v = std::pow(k.fx * 0.1 / 2, 2) + 0.3;
  EXPECT_NEAR(p->cov(0, 0), v, 1e-12);
  EXPECT_NEAR(p->cov(0, 1), 0.0, 1e-12);
}

TEST(Render, MatchesBruteForceCompositing) {
  std::mt19937_64 rng(11);
  const PinholeIntrinsics k = raster_camera(64, 64);
  std::uniform_int_distribution<int> count(1, 64);
  for (int scene = 0; scene < 20; ++scene) {
    GaussianMap map = random_scene(rng, count(rng), k, 0.99);
    const SE3Pose pose = SE3Pose::exp((Vec6() << 0.1, -0.05, 0.1, 0.02, -0.03, 0.01).finished() * (scene % 3));
    const RenderOutput tiled = render(map, pose, k);
    const BruteForce ref = brute_force_render(map, pose, k);
    double err = 0;
    for (std::size_t i = 0; i < ref.intensity.size(); ++i) {
      err = std::max({err, std::abs(tiled.intensity[i] - ref.intensity[i]), std::abs(tiled.depth[i] - ref.depth[i]),
                      std::abs(tiled.alpha[i] - ref.alpha[i])});
    }
    EXPECT_LT(err, 1e-6) << "scene " << scene;
  }
}

TEST(Render, EmptyMapIsBlack) {
  GaussianMap map;
  const RenderOutput out = render(map, SE3Pose::identity(), raster_camera());
  for (double a : out.alpha) EXPECT_EQ(a, 0.0);
  for (double c : out.intensity) EXPECT_EQ(c, 0.0);
}

TEST(Render, TileListsAreDepthSorted) {
  std::mt19937_64 rng(3);
  const PinholeIntrinsics k = raster_camera(64, 48);
  GaussianMap map = random_scene(rng, 40, k);
  const RenderOutput out = render(map, SE3Pose::identity(), k);
  for (const auto& list : out.tile_lists) {
    for (std::size_t i = 1; i < list.size(); ++i) {
      EXPECT_LE(out.projected[list[i - 1]].z, out.projected[list[i]].z);
    }
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const PinholeIntrinsics k = raster_camera();
  const double h = 1e-4;
  int checked = 0;
  for (int config = 0; config < 50; ++config) {
    GaussianMap map = random_scene(rng, 1 + config % 4, k);
    const SE3Pose pose = SE3Pose::exp((Vec6() << 0.02, 0.01, -0.03, 0.01, 0.02, -0.01).finished() * (config % 2));
    const Weights w = random_weights(rng, k);
    const RenderOutput tape = render(map, pose, k);
    const GradientBundle g = backward(tape, map, pose, k, w.wi, w.wd, w.wa);
    for (std::size_t i = 0; i < map.size(); ++i) {
      for (int p = 0; p < kGaussianParams; ++p) {
        GaussianMap plus = map, minus = map;
        GaussianParams a = map.gaussians[i].params(), b = a;
        a(p) += h;
        b(p) -= h;
        // Perturb the raw parameter vector; set_params renormalizes the quaternion.
        plus.gaussians[i].set_params(a);
        minus.gaussians[i].set_params(b);
        const double fd = (linear_objective(plus, pose, k, w) - linear_objective(minus, pose, k, w)) / (2 * h);
        const double an = g.grads[i](p);
        const double scale = std::max({std::abs(fd), std::abs(an), 1e-3});
        EXPECT_LT(std::abs(fd - an) / scale, 1e-3) << "config " << config << " gaussian " << i << " param " << p
                                                   << " fd " << fd << " analytic " << an;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 50 * kGaussianParams);
}

TEST(Backward, RejectsStaleTape) {
  std::mt19937_64 rng(1);
  const PinholeIntrinsics k = raster_camera();
  GaussianMap map = random_scene(rng, 3, k);
  const RenderOutput tape = render(map, SE3Pose::identity(), k);
  map.version++;
  Grid<double> z(k.width, k.height, 0.0);
  EXPECT_THROW(backward(tape, map, SE3Pose::identity(), k, z, z), ContractViolation);
}

TEST(Backward, ScreenStatisticsCoverVisibleGaussians) {
  std::mt19937_64 rng(9);
  const PinholeIntrinsics k = raster_camera();
  GaussianMap map = random_scene(rng, 3, k);
  Gaussian3D hidden;
  hidden.mu = Vec3(0, 0, -2);
  map.add(hidden);
  const Weights w = random_weights(rng, k);
  const RenderOutput tape = render(map, SE3Pose::identity(), k);
  const GradientBundle g = backward(tape, map, SE3Pose::identity(), k, w.wi, w.wd, w.wa);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(g.visible[i], 1);
    EXPECT_GE(g.abs_mean2d[i].x(), std::abs(g.mean2d[i].x()));
    EXPECT_GE(g.abs_mean2d[i].y(), std::abs(g.mean2d[i].y()));
  }
  EXPECT_EQ(g.visible[3], 0);
  EXPECT_TRUE(g.grads[3].isZero());
  accumulate_stats(map, g, k);
  EXPECT_EQ(map.stats[0].count, 1);
  EXPECT_EQ(map.stats[3].count, 0);
}

TEST(Loss, WeightsCombineExactly) {
  EXPECT_DOUBLE_EQ(combine_loss(0.1, 0.2, 0.05, LossWeights{0.2, 0.2}), 0.8 * 0.1 + 0.2 * 0.2 + 0.2 * 0.05);
  EXPECT_NEAR(combine_loss(0.1, 0.2, 0.05, LossWeights{0.2, 0.2}), 0.13, 1e-15);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  const PinholeIntrinsics k = raster_camera(32, 32);
  GaussianMap map = random_scene(rng, 12, k, 0.99);
  RenderOutput out = render(map, SE3Pose::identity(), k);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  GrayImage target(k.width, k.height);
  Grid<double> proxy(k.width, k.height);
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] = u(rng);
    proxy[i] = 1.0 / (2 + 2 * u(rng));
  }
  const LossResult l = loss(out, target, proxy);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, target.size() - 1)(rng);
    RenderOutput p = out, m = out;
    p.intensity[i] += h;
    m.intensity[i] -= h;
    const double fd = (loss(p, target, proxy).terms.total - loss(m, target, proxy).terms.total) / (2 * h);
    EXPECT_NEAR(l.d_intensity[i], fd, 1e-6);
    if (out.alpha[i] > 0.5) {
      p = out;
      m = out;
      p.depth[i] += h;
      m.depth[i] -= h;
      const double fdd = (loss(p, target, proxy).terms.total - loss(m, target, proxy).terms.total) / (2 * h);
      EXPECT_NEAR(l.d_depth[i], fdd, 1e-6);
    }
  }
}
