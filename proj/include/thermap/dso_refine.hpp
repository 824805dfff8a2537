#pragma once

#include <map>
#include <span>
#include <vector>

#include "thermap/dba_solver.hpp"
#include "thermap/frame_graph.hpp"

namespace thermap {

/// Low/high-error split by multi-view consistency. Pixels whose world point
/// spread over all observing neighbors stays below eta * mean depth are low.
/// Landings within one pixel of the border do not count as observations.
PixelClassMask classify_pixels(const CovisibilityGraph& graph, int kf, double eta,
                               const PinholeIntrinsics& grid);

struct AffineFit {
  double theta = 1.0;
  double gamma = 0.0;
  bool degenerate = false;  // constant prior, theta forced to 1
  bool clamped = false;     // non-positive theta clamped
  int samples = 0;
};

/// Least squares d ~ theta * x + gamma with x the inverse mono depth.
AffineFit affine_init(std::span<const double> d, std::span<const double> inv_mono);

/// Fit over low-error pixels with valid depth and prior. With fewer than two
/// of those, falls back to observed (low or high) pixels, then to all valid ones.
AffineFit affine_init(const InverseDepthMap& d, const MonoDepthMap& mono,
                      const PixelClassMask& classes);

struct DSOWeights {
  double alpha1 = 0.01;  // high-error pixels
  double alpha2 = 0.1;   // low-error pixels
};

/// Reprojection term over edges leaving `kfs` (poses frozen) plus the
/// mono-prior terms of those keyframes.
double dso_objective(const CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                     const std::vector<int>& kfs, const DSOWeights& weights);

/// Normal equations of one keyframe. Variables are the high-error depths and
/// (theta, gamma); the depth block is diagonal.
struct DSOSystem {
  struct Var {
    int x;
    int y;
  };
  std::vector<Var> vars;
  std::vector<double> hdd;
  std::vector<double> bd;
  std::vector<Vec2> hda;  // coupling to (theta, gamma)
  Mat2 haa = Mat2::Zero();
  Vec2 ba = Vec2::Zero();

  /// Returns (depth increments, affine increment), or nothing when the
  /// reduced 2x2 system is not positive definite.
  std::optional<std::pair<std::vector<double>, Vec2>> solve(double lambda) const;
};

DSOSystem build_dso_system(const CovisibilityGraph& graph, const PinholeIntrinsics& grid, int kf,
                           const DSOWeights& weights);

/// One LM step on the DSO objective for every keyframe in `kfs`.
StepResult dso_step(CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                    const std::vector<int>& kfs, const DSOWeights& weights, double& lambda,
                    const LMOptions& options = {});

struct AlternationOptions {
  int rounds = 3;
  int dba_steps = 5;
  int dso_steps = 5;
  double eta = 0.05;
  DSOWeights weights;
  LMOptions lm;
};

struct AlternationTrace {
  std::vector<double> dba_objectives;  // after each DBA phase
  std::vector<double> dso_objectives;  // after each DSO phase
  std::vector<std::map<int, PixelClassMask>> classes;  // per round
  int dba_steps = 0;
  int dso_steps = 0;
};

/// Alternates DBA (free poses and depths) and DSO (depth keyframes only).
/// Edge flows must be current; they stay fixed for the whole call.
AlternationTrace alternate_dba_dso(CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                                   const std::vector<int>& free_pose_kfs,
                                   const std::vector<int>& free_depth_kfs,
                                   const AlternationOptions& options = {});

/// Pixels no neighbor observes carry no multi-view information; they take the
/// scale-aligned mono prior theta / D + gamma. Returns the number of pixels set.
int fill_unobserved(Keyframe& kf);

}  // namespace thermap
