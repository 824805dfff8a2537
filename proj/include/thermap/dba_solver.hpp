#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "thermap/geometry.hpp"
#include "thermap/oracles.hpp"

namespace thermap {

/// Confidence below this value marks a residual component as unused.
inline constexpr double kMinFlowWeight = 1e-3;

using Mat26 = Eigen::Matrix<double, 2, 6>;

/// One reprojection edge: pixels of node `src` (which carries a depth map)
/// observed in node `dst`.
struct BAEdge {
  int src = 0;
  int dst = 0;
  const FlowPrediction* flow = nullptr;
};

/// Optimization variables. Nodes without depth (tracked non-keyframes) keep
/// an empty depth map.
struct BAState {
  std::vector<SE3Pose> poses;
  std::vector<InverseDepthMap> depths;
};

struct BAProblem {
  PinholeIntrinsics intrinsics;  // depth-grid intrinsics
  std::vector<BAEdge> edges;
  std::vector<std::uint8_t> pose_fixed;
  std::vector<std::uint8_t> depth_fixed;

  std::size_t num_nodes() const { return pose_fixed.size(); }
};

/// Residual target - Pi(T_dst^-1 T_src Pi^-1(p, d)) with its Jacobians with
/// respect to the left-perturbation tangents of both poses and the inverse depth.
struct PixelLinearization {
  bool valid = false;
  Vec2 residual = Vec2::Zero();
  Mat26 j_src = Mat26::Zero();
  Mat26 j_dst = Mat26::Zero();
  Vec2 j_depth = Vec2::Zero();
};

PixelLinearization linearize_pixel(const PinholeIntrinsics& intr, const SE3Pose& pose_src,
                                   const SE3Pose& pose_dst, const Vec2& pixel, double inv_depth,
                                   const Vec2& target);

/// Residual only; invalid when the point lands behind (or too close to) the
/// destination camera.
std::optional<Vec2> pixel_residual(const PinholeIntrinsics& intr, const SE3Pose& pose_src,
                                   const SE3Pose& pose_dst, const Vec2& pixel, double inv_depth,
                                   const Vec2& target);

/// Sum over edges and valid pixels of r^T diag(w) r.
double evaluate_objective(const BAProblem& problem, const BAState& state);

/// Normal equations H dx = b with the inverse-depth block kept diagonal.
///
/// Pose blocks are dense (6 per free node). Each depth variable couples only
/// to the poses of its edges, stored as sparse 6-vectors.
struct NormalEquations {
  struct Coupling {
    int depth_var;
    int pose_block;
    Vec6 value;
  };
  struct DepthVar {
    int node;
    int x;
    int y;
  };

  std::vector<int> pose_block_of_node;  // -1 for fixed
  std::vector<int> node_of_pose_block;
  std::vector<DepthVar> depth_vars;
  Eigen::MatrixXd hpp;
  Eigen::VectorXd bp;
  std::vector<double> hdd;
  std::vector<double> bd;
  std::vector<Coupling> couplings;  // sorted by depth_var

  int num_pose_vars() const { return static_cast<int>(hpp.rows()); }
  int num_depth_vars() const { return static_cast<int>(hdd.size()); }

  /// Full symmetric system, depth variables after pose variables. Test aid.
  Eigen::MatrixXd dense_hessian() const;
  Eigen::VectorXd dense_rhs() const;

  /// Solves (H + lambda * D) dx = b by eliminating depth blocks, where D is the
  /// diagonal of H floored at a small constant. Returns std::nullopt if the
  /// reduced pose system is not positive definite.
  std::optional<Eigen::VectorXd> solve_schur(double lambda) const;
  /// Damping matrix diagonal applied by solve_schur, in dense ordering.
  Eigen::VectorXd damping_diagonal() const;
};

NormalEquations build_normal_equations(const BAProblem& problem, const BAState& state);

struct StepResult {
  bool accepted = false;
  double objective_before = 0;
  double objective_after = 0;
  double update_norm = 0;
  double lambda = 0;  // damping after the step
};

struct LMOptions {
  double lambda_init = 1e-4;
  int max_lambda_doublings = 8;
};

/// One Levenberg-Marquardt step. On acceptance `state` is replaced by the
/// updated state and `lambda` halves; otherwise `lambda` doubles.
StepResult dba_step(const BAProblem& problem, BAState& state, double& lambda,
                    const LMOptions& options = {});

struct RunResult {
  double final_objective = 0;
  int steps = 0;
  std::vector<double> accepted_objectives;  // objective after each accepted step
};

/// Iterates dba_step until the relative objective decrease of an accepted step
/// falls below `tol` (tol > 0) or `max_steps` steps have been attempted.
RunResult run_dba(const BAProblem& problem, BAState& state, int max_steps, double tol,
                  const LMOptions& options = {});

/// Applies a stacked update (pose tangents then depth increments), retracting
/// poses and clamping depths.
void apply_update(const NormalEquations& ne, const Eigen::VectorXd& dx, BAState& state);

}  // namespace thermap
