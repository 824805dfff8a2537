#include <cmath>
#include <filesystem>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "thermap/dataset_io.hpp"
#include "thermap/dso_refine.hpp"
#include "thermap/errors.hpp"
#include "thermap/oracles.hpp"

using namespace thermap;
namespace fs = std::filesystem;

namespace {

constexpr double kPlaneZ = 4.0;

// Two cameras facing a fronto-parallel wall at z = 4; camera 1 is shifted
// sideways by `shift`.
std::shared_ptr<GroundTruth> wall(double shift) {
  auto gt = std::make_shared<GroundTruth>();
  gt->intrinsics = {160, 160, 80, 64, 160, 128};
  gt->poses[0] = SE3Pose();
  gt->poses[1] = SE3Pose(Quat::Identity(), Vec3(shift, 0, 0));
  gt->depths[0] = Grid<double>(160, 128, kPlaneZ);
  gt->depths[1] = Grid<double>(160, 128, kPlaneZ);
  return gt;
}

// Hand-derived correspondence on the wall: a sideways shift s moves every
// pixel by -f s / Z.
Grid<Vec2> wall_correspondence(const GroundTruth& gt, double shift) {
  const PinholeIntrinsics g = gt.grid_intrinsics();
  Grid<Vec2> c(g.width, g.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) c(x, y) = Vec2(x - g.fx * shift / kPlaneZ, y);
  }
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("thermap_oracles_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(SyntheticFlow, ZeroCorrectionAtGroundTruth) {
  const auto gt = wall(0.4);
  const SyntheticFlowOracle oracle(gt, {});
  const Grid<Vec2> cur = wall_correspondence(*gt, 0.4);
  const FlowPrediction f = oracle.predict_flow(0, 1, cur);
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      EXPECT_LT(f.r(x, y).norm(), 1e-12);
      EXPECT_LT((f.target(x, y) - cur(x, y)).norm(), 1e-12);
    }
  }
}

TEST(SyntheticFlow, CorrectionPointsToGroundTruth) {
  const auto gt = wall(0.4);
  const SyntheticFlowOracle oracle(gt, {});
  Grid<Vec2> cur(20, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 20; ++x) cur(x, y) = Vec2(x, y);
  }
  const FlowPrediction f = oracle.predict_flow(0, 1, cur);
  const Grid<Vec2> exact = wall_correspondence(*gt, 0.4);
  for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_LT((f.target(i % 20, i / 20) - exact[i]).norm(), 1e-12);
}

TEST(SyntheticFlow, OutOfFrameHasZeroConfidence) {
  // Grid shift of f s / Z = 20 * 1.0 / 4 = 5 pixels to the left.
  const auto gt = wall(1.0);
  const SyntheticFlowOracle oracle(gt, {});
  const FlowPrediction f = oracle.predict_flow(0, 1, wall_correspondence(*gt, 1.0));
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 20; ++x) {
      const Vec2 expected = x - 5 >= 0 ? Vec2(1, 1) : Vec2(0, 0);
      EXPECT_EQ(f.w(x, y), expected) << x << "," << y;
    }
  }
}

TEST(SyntheticFlow, OccludedHasZeroConfidence) {
  auto gt = wall(0.0);
  // Something close to camera 1 covers the top-left quarter of its view.
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 80; ++x) gt->depths[1](x, y) = 1.0;
  }
  const SyntheticFlowOracle oracle(gt, {});
  const FlowPrediction f = oracle.predict_flow(0, 1, wall_correspondence(*gt, 0.0));
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 20; ++x) {
      const bool hidden = x * 8 < 80 && y * 8 < 64;
      EXPECT_EQ(f.w(x, y), hidden ? Vec2(0, 0) : Vec2(1, 1));
    }
  }
}

TEST(SyntheticFlow, NoiseFollowsFoldedNormal) {
  const double sigma = 0.5;
  const auto gt = wall(0.2);
  // A larger grid keeps the statistic tight.
  gt->intrinsics = {640, 640, 320, 256, 640, 512};
  gt->depths[0] = Grid<double>(640, 512, kPlaneZ);
  gt->depths[1] = Grid<double>(640, 512, kPlaneZ);
  const Grid<Vec2> cur = wall_correspondence(*gt, 0.2);
  const SyntheticFlowOracle oracle(gt, {sigma, 17});
  const FlowPrediction f = oracle.predict_flow(0, 1, cur);
  double sum = 0;
  for (const Vec2& r : f.r) sum += std::abs(r.x()) + std::abs(r.y());
  const double n = 2.0 * f.r.size();
  EXPECT_NEAR(sum / n, std::sqrt(2 / M_PI) * sigma, 3 * sigma / std::sqrt(n));
}

TEST(SyntheticFlow, ReproducibleUnderSeed) {
  const auto gt = wall(0.2);
  const Grid<Vec2> cur = wall_correspondence(*gt, 0.2);
  const FlowPrediction a = SyntheticFlowOracle(gt, {0.3, 5}).predict_flow(0, 1, cur);
  const FlowPrediction b = SyntheticFlowOracle(gt, {0.3, 5}).predict_flow(0, 1, cur);
  const FlowPrediction c = SyntheticFlowOracle(gt, {0.3, 6}).predict_flow(0, 1, cur);
  EXPECT_TRUE(a.r == b.r);
  EXPECT_TRUE(a.w == b.w);
  EXPECT_FALSE(a.r == c.r);
}

TEST(SyntheticFlow, MissingGroundTruth) {
  const auto gt = wall(0.2);
  const SyntheticFlowOracle oracle(gt, {});
  EXPECT_THROW(oracle.predict_flow(0, 7, wall_correspondence(*gt, 0.2)), OracleUnavailableError);
}

TEST(SyntheticMono, IdentityModelIsExact) {
  InverseDepthMap gt(8, 6, 0.25);
  gt.values(3, 2) = 0.8;
  const MonoDepthMap m = synthetic_mono_depth(gt, 1.0, 0.0, 0.0, 1);
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    EXPECT_NEAR(m.values[i], 1.0 / gt.values[i], 1e-12);
    EXPECT_EQ(m.valid[i], 1);
  }
}

TEST(SyntheticMono, AffineModelIsRecovered) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  InverseDepthMap gt(40, 32);
  for (auto& v : gt.values) v = u(rng);
  const MonoDepthMap m = synthetic_mono_depth(gt, 2.0, 0.1, 0.0, 1);
  std::vector<double> x, d;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    x.push_back(1.0 / m.values[i]);
    d.push_back(gt.values[i]);
  }
  const AffineFit fit = affine_init(d, x);
  EXPECT_NEAR(fit.theta, 2.0, 1e-9);
  EXPECT_NEAR(fit.gamma, 0.1, 1e-9);
}

TEST(SyntheticMono, NoisyOutputStaysPositive) {
  InverseDepthMap gt(40, 32, 0.01);
  const MonoDepthMap m = synthetic_mono_depth(gt, 1.0, 0.0, 0.5, 3);
  int invalid = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    EXPECT_GT(m.values[i], 0.0);
    EXPECT_TRUE(std::isfinite(m.values[i]));
    invalid += m.valid[i] == 0;
  }
  // Roughly half the draws push the inverse depth below zero and are flagged.
  EXPECT_GT(invalid, 0);
}

TEST(SyntheticMono, RejectsNonPositiveTheta) {
  EXPECT_THROW(synthetic_mono_depth(InverseDepthMap(2, 2), 0.0, 0.0, 0.0, 0), ContractViolation);
}

TEST(FileOracle, DepthRoundTripIsBitwise) {
  const fs::path dir = scratch("depth");
  PfmImage p{5, 3, 1, {}};
  for (int k = 0; k < 15; ++k) p.data.push_back(1.0f + 0.1234567f * k);
  pfm_write(p, dir / "depth_000004.pfm");
  const OraclePair o = load_file_oracle(dir);
  const MonoDepthMap m = o.depth->predict_depth(4);
  ASSERT_EQ(m.width(), 5);
  ASSERT_EQ(m.height(), 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) EXPECT_EQ(static_cast<float>(m.values(x, y)), p.at(x, y));
  }
  EXPECT_THROW(o.depth->predict_depth(5), OracleUnavailableError);
}

TEST(FileOracle, FlowIsTotalDisplacement) {
  const fs::path dir = scratch("flow");
  PfmImage f{4, 2, 3, std::vector<float>(24, 0.0f)}, c{4, 2, 3, std::vector<float>(24, 0.0f)};
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) {
      f.at(x, y, 0) = 1.5f;
      f.at(x, y, 1) = -0.5f;
      c.at(x, y, 0) = 0.25f;
      c.at(x, y, 1) = -1.0f;  // negative confidences are clipped
    }
  }
  pfm_write(f, dir / "flow_1_2.pfm");
  pfm_write(c, dir / "conf_1_2.pfm");
  const OraclePair o = load_file_oracle(dir);
  Grid<Vec2> cur(4, 2, Vec2(0.5, 0.5));
  const FlowPrediction p = o.flow->predict_flow(1, 2, cur);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(p.target(x, y), Vec2(x + 1.5, y - 0.5));
      EXPECT_EQ(p.w(x, y), Vec2(0.25, 0.0));
    }
  }
  EXPECT_THROW(o.flow->predict_flow(2, 1, cur), OracleUnavailableError);
}

TEST(FileOracle, WrongChannelCountIsParseError) {
  const fs::path dir = scratch("channels");
  pfm_write(PfmImage{2, 2, 3, std::vector<float>(12, 1.0f)}, dir / "depth_1.pfm");
  EXPECT_THROW(load_file_oracle(dir), ParseError);
}

TEST(FileOracle, MissingDirectoryIsIoError) {
  EXPECT_THROW(load_file_oracle("/nonexistent/thermap/oracle"), IoError);
}

TEST(MixSeed, Deterministic) {
  EXPECT_EQ(mix_seed(1, 2, 3), mix_seed(1, 2, 3));
  EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 3, 2));
}
