#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "thermap/geometry.hpp"
#include "thermap/grid.hpp"

namespace thermap {

/// Learned-flow surrogate output for one edge (i, j).
///
/// `base` is the correspondence field the correction was predicted against;
/// the corrected target correspondence is base + r.
struct FlowPrediction {
  Grid<Vec2> base;
  Grid<Vec2> r;
  Grid<Vec2> w;

  int width() const { return r.width(); }
  int height() const { return r.height(); }
  Vec2 target(int x, int y) const { return base(x, y) + r(x, y); }
};

/// Monocular depth prior (depth, arbitrary scale) at depth-grid resolution.
struct MonoDepthMap {
  Grid<double> values;
  Mask valid;
  int source_id = -1;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
};

class FlowOracle {
 public:
  virtual ~FlowOracle() = default;
  /// Flow correction for pixels of frame i given their current correspondence
  /// in frame j. Throws OracleUnavailableError if no prediction exists.
  virtual FlowPrediction predict_flow(int frame_i, int frame_j,
                                      const Grid<Vec2>& current) const = 0;
};

class DepthOracle {
 public:
  virtual ~DepthOracle() = default;
  virtual MonoDepthMap predict_depth(int frame) const = 0;
};

/// Ground truth used by the synthetic oracles: world-from-camera poses and
/// full-resolution z-depth per frame.
struct GroundTruth {
  PinholeIntrinsics intrinsics;  // full resolution
  int grid_factor = 8;
  std::map<int, SE3Pose> poses;
  std::map<int, Grid<double>> depths;

  PinholeIntrinsics grid_intrinsics() const { return intrinsics.downscaled(grid_factor); }
  /// Inverse depth of frame `frame` sampled at the depth-grid pixels.
  InverseDepthMap grid_inverse_depth(int frame) const;
};

struct SyntheticFlowOptions {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  /// Relative depth tolerance of the z-buffer co-visibility test.
  double occlusion_tolerance = 0.02;
};

/// Ground-truth correspondence oracle with additive Gaussian noise.
class SyntheticFlowOracle final : public FlowOracle {
 public:
  SyntheticFlowOracle(std::shared_ptr<const GroundTruth> gt, SyntheticFlowOptions options);
  FlowPrediction predict_flow(int frame_i, int frame_j, const Grid<Vec2>& current) const override;

 private:
  std::shared_ptr<const GroundTruth> gt_;
  SyntheticFlowOptions options_;
};

/// Affine-distorted ground-truth inverse depth: the returned depth D satisfies
/// d_gt = theta / D + gamma (+ noise on 1/D).
MonoDepthMap synthetic_mono_depth(const InverseDepthMap& gt_inv_depth, double theta,
                                  double gamma, double sigma, std::uint64_t seed,
                                  int source_id = -1);

struct SyntheticDepthOptions {
  double theta = 1.0;
  double gamma = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

class SyntheticDepthOracle final : public DepthOracle {
 public:
  SyntheticDepthOracle(std::shared_ptr<const GroundTruth> gt, SyntheticDepthOptions options);
  MonoDepthMap predict_depth(int frame) const override;

 private:
  std::shared_ptr<const GroundTruth> gt_;
  SyntheticDepthOptions options_;
};

/// Predictions exported from real networks:
///   depth_<frame>.pfm      single channel mono depth
///   flow_<i>_<j>.pfm       3-channel, (dx, dy, unused): total flow p_ij - p_i
///   conf_<i>_<j>.pfm       3-channel, (w_x, w_y, unused)
class FileOracle final : public FlowOracle, public DepthOracle {
 public:
  explicit FileOracle(const std::filesystem::path& dir);
  FlowPrediction predict_flow(int frame_i, int frame_j, const Grid<Vec2>& current) const override;
  MonoDepthMap predict_depth(int frame) const override;

 private:
  std::map<int, MonoDepthMap> depths_;
  std::map<std::pair<int, int>, std::pair<Grid<Vec2>, Grid<Vec2>>> flows_;
};

struct OraclePair {
  std::shared_ptr<const FlowOracle> flow;
  std::shared_ptr<const DepthOracle> depth;
};

OraclePair load_file_oracle(const std::filesystem::path& dir);

/// Deterministic per-key seed mixing (splitmix64).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace thermap
