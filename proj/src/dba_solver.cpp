#include "thermap/dba_solver.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

// Closest admissible point depth in the destination camera.
constexpr double kMinPointDepth = 1.0 / kMaxInvDepth;
constexpr double kDampingFloor = 1e-6;
constexpr double kObjectiveFloor = 1e-20;

Vec3 ray_point(const PinholeIntrinsics& intr, const Vec2& pixel, double inv_depth) {
  return Vec3((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0) / inv_depth;
}

Vec2 masked_weight(const Vec2& w) {
  return Vec2(w.x() >= kMinFlowWeight ? w.x() : 0.0, w.y() >= kMinFlowWeight ? w.y() : 0.0);
}

}  // namespace

std::optional<Vec2> pixel_residual(const PinholeIntrinsics& intr, const SE3Pose& pose_src,
                                   const SE3Pose& pose_dst, const Vec2& pixel, double inv_depth,
                                   const Vec2& target) {
  const Vec3 pw = pose_src * ray_point(intr, pixel, inv_depth);
  const Vec3 pj = pose_dst.rotation.conjugate() * (pw - pose_dst.translation);
  if (!(pj.z() >= kMinPointDepth)) return std::nullopt;
  const Vec2 proj(intr.fx * pj.x() / pj.z() + intr.cx, intr.fy * pj.y() / pj.z() + intr.cy);
  return target - proj;
}

PixelLinearization linearize_pixel(const PinholeIntrinsics& intr, const SE3Pose& pose_src,
                                   const SE3Pose& pose_dst, const Vec2& pixel, double inv_depth,
                                   const Vec2& target) {
  PixelLinearization lin;
  const Vec3 xc = ray_point(intr, pixel, inv_depth);
  const Mat3 ri = pose_src.rotation_matrix();
  const Mat3 rjt = pose_dst.rotation_matrix().transpose();
  const Vec3 pw = ri * xc + pose_src.translation;
  const Vec3 pj = rjt * (pw - pose_dst.translation);
  if (!(pj.z() >= kMinPointDepth)) return lin;

  const double iz = 1.0 / pj.z();
  const Vec2 proj(intr.fx * pj.x() * iz + intr.cx, intr.fy * pj.y() * iz + intr.cy);
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << intr.fx * iz, 0, -intr.fx * pj.x() * iz * iz, 0, intr.fy * iz, -intr.fy * pj.y() * iz * iz;

  // d pj / d xi_src for the left perturbation Exp(xi) * T_src.
  Eigen::Matrix<double, 3, 6> dp_src;
  dp_src.leftCols<3>() = rjt;
  dp_src.rightCols<3>() = -rjt * skew(pw);

  lin.valid = true;
  lin.residual = target - proj;
  lin.j_src = -dproj * dp_src;
  lin.j_dst = -lin.j_src;
  lin.j_depth = dproj * (rjt * ri * xc) / inv_depth;  // -(dproj * d pj/dd), d pj/dd = -R x / d
  return lin;
}

double evaluate_objective(const BAProblem& problem, const BAState& state) {
  double total = 0;
  for (const BAEdge& e : problem.edges) {
    const InverseDepthMap& d = state.depths[e.src];
    const FlowPrediction& f = *e.flow;
    for (int y = 0; y < d.height(); ++y) {
      for (int x = 0; x < d.width(); ++x) {
        if (!d.is_valid(x, y)) continue;
        const Vec2 w = masked_weight(f.w(x, y));
        if (w.x() == 0 && w.y() == 0) continue;
        const auto r = pixel_residual(problem.intrinsics, state.poses[e.src], state.poses[e.dst],
                                      Vec2(x, y), d.values(x, y), f.target(x, y));
        if (!r) continue;
        total += w.x() * r->x() * r->x() + w.y() * r->y() * r->y();
      }
    }
  }
  return total;
}

NormalEquations build_normal_equations(const BAProblem& problem, const BAState& state) {
  NormalEquations ne;
  const std::size_t n = problem.num_nodes();
  ne.pose_block_of_node.assign(n, -1);
  for (std::size_t k = 0; k < n; ++k) {
    if (!problem.pose_fixed[k]) {
      ne.pose_block_of_node[k] = static_cast<int>(ne.node_of_pose_block.size());
      ne.node_of_pose_block.push_back(static_cast<int>(k));
    }
  }
  const int np = static_cast<int>(ne.node_of_pose_block.size());
  ne.hpp = Eigen::MatrixXd::Zero(6 * np, 6 * np);
  ne.bp = Eigen::VectorXd::Zero(6 * np);

  std::vector<std::vector<const BAEdge*>> edges_from(n);
  for (const BAEdge& e : problem.edges) edges_from[e.src].push_back(&e);

  struct LocalCoupling {
    int block;
    Vec6 value;
  };
  std::vector<LocalCoupling> local;

  for (std::size_t src = 0; src < n; ++src) {
    if (edges_from[src].empty()) continue;
    const InverseDepthMap& d = state.depths[src];
    const bool depth_free = !problem.depth_fixed[src];
    const int bi = ne.pose_block_of_node[src];
    for (int y = 0; y < d.height(); ++y) {
      for (int x = 0; x < d.width(); ++x) {
        if (!d.is_valid(x, y)) continue;
        double hdd = 0, bd = 0;
        bool used = false;
        local.clear();
        Vec6 c_src = Vec6::Zero();
        for (const BAEdge* e : edges_from[src]) {
          const FlowPrediction& f = *e->flow;
          const Vec2 w = masked_weight(f.w(x, y));
          if (w.x() == 0 && w.y() == 0) continue;
          const PixelLinearization lin =
              linearize_pixel(problem.intrinsics, state.poses[src], state.poses[e->dst], Vec2(x, y),
                              d.values(x, y), f.target(x, y));
          if (!lin.valid) continue;
          used = true;
          const Eigen::Matrix2d W = w.asDiagonal();
          const int bj = ne.pose_block_of_node[e->dst];
          const Eigen::Matrix<double, 6, 2> jiw = lin.j_src.transpose() * W;
          const Eigen::Matrix<double, 6, 2> jjw = lin.j_dst.transpose() * W;
          if (bi >= 0) {
            ne.hpp.block<6, 6>(6 * bi, 6 * bi) += jiw * lin.j_src;
            ne.bp.segment<6>(6 * bi) -= jiw * lin.residual;
          }
          if (bj >= 0) {
            ne.hpp.block<6, 6>(6 * bj, 6 * bj) += jjw * lin.j_dst;
            ne.bp.segment<6>(6 * bj) -= jjw * lin.residual;
          }
          if (bi >= 0 && bj >= 0) {
            const Eigen::Matrix<double, 6, 6> hij = jiw * lin.j_dst;
            ne.hpp.block<6, 6>(6 * bi, 6 * bj) += hij;
            ne.hpp.block<6, 6>(6 * bj, 6 * bi) += hij.transpose();
          }
          if (depth_free) {
            hdd += lin.j_depth.dot(W * lin.j_depth);
            bd -= lin.j_depth.dot(W * lin.residual);
            if (bi >= 0) c_src += jiw * lin.j_depth;
            if (bj >= 0) local.push_back({bj, jjw * lin.j_depth});
          }
        }
        if (!used || !depth_free) continue;
        const int var = static_cast<int>(ne.depth_vars.size());
        ne.depth_vars.push_back({static_cast<int>(src), x, y});
        ne.hdd.push_back(hdd);
        ne.bd.push_back(bd);
        if (bi >= 0) ne.couplings.push_back({var, bi, c_src});
        for (const auto& lc : local) ne.couplings.push_back({var, lc.block, lc.value});
      }
    }
  }
  return ne;
}

Eigen::VectorXd NormalEquations::damping_diagonal() const {
  const int np = num_pose_vars();
  Eigen::VectorXd d(np + num_depth_vars());
  for (int k = 0; k < np; ++k) d(k) = std::max(hpp(k, k), kDampingFloor);
  for (int k = 0; k < num_depth_vars(); ++k) d(np + k) = std::max(hdd[k], kDampingFloor);
  return d;
}

Eigen::MatrixXd NormalEquations::dense_hessian() const {
  const int np = num_pose_vars();
  const int nd = num_depth_vars();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(np + nd, np + nd);
  h.topLeftCorner(np, np) = hpp;
  for (int k = 0; k < nd; ++k) h(np + k, np + k) = hdd[k];
  for (const Coupling& c : couplings) {
    h.block<6, 1>(6 * c.pose_block, np + c.depth_var) += c.value;
    h.block<1, 6>(np + c.depth_var, 6 * c.pose_block) += c.value.transpose();
  }
  return h;
}

Eigen::VectorXd NormalEquations::dense_rhs() const {
  const int np = num_pose_vars();
  Eigen::VectorXd b(np + num_depth_vars());
  b.head(np) = bp;
  for (int k = 0; k < num_depth_vars(); ++k) b(np + k) = bd[k];
  return b;
}

std::optional<Eigen::VectorXd> NormalEquations::solve_schur(double lambda) const {
  const int np = num_pose_vars();
  const int nd = num_depth_vars();
  const Eigen::VectorXd damp = damping_diagonal();

  std::vector<double> hdd_inv(nd);
  for (int k = 0; k < nd; ++k) hdd_inv[k] = 1.0 / (hdd[k] + lambda * damp(np + k));

  Eigen::VectorXd dx(np + nd);
  if (np > 0) {
    Eigen::MatrixXd s = hpp;
    s.diagonal() += lambda * damp.head(np);
    Eigen::VectorXd rhs = bp;
    // Couplings are grouped by depth variable; eliminate one group at a time.
    for (std::size_t a = 0; a < couplings.size();) {
      std::size_t end = a;
      const int var = couplings[a].depth_var;
      while (end < couplings.size() && couplings[end].depth_var == var) ++end;
      const double inv = hdd_inv[var];
      for (std::size_t p = a; p < end; ++p) {
        const Coupling& cp = couplings[p];
        rhs.segment<6>(6 * cp.pose_block) -= cp.value * (bd[var] * inv);
        for (std::size_t q = a; q < end; ++q) {
          const Coupling& cq = couplings[q];
          s.block<6, 6>(6 * cp.pose_block, 6 * cq.pose_block) -= cp.value * cq.value.transpose() * inv;
        }
      }
      a = end;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) return std::nullopt;
    dx.head(np) = llt.solve(rhs);
    if (!dx.head(np).allFinite()) return std::nullopt;
  }
  for (int k = 0; k < nd; ++k) dx(np + k) = bd[k];
  for (const Coupling& c : couplings) {
    dx(np + c.depth_var) -= c.value.dot(dx.segment<6>(6 * c.pose_block));
  }
  for (int k = 0; k < nd; ++k) dx(np + k) *= hdd_inv[k];
  if (!dx.allFinite()) return std::nullopt;
  return dx;
}

void apply_update(const NormalEquations& ne, const Eigen::VectorXd& dx, BAState& state) {
  const int np = ne.num_pose_vars();
  for (std::size_t b = 0; b < ne.node_of_pose_block.size(); ++b) {
    const int node = ne.node_of_pose_block[b];
    state.poses[node] = state.poses[node].retract(dx.segment<6>(6 * static_cast<int>(b)));
  }
  for (int k = 0; k < ne.num_depth_vars(); ++k) {
    const auto& v = ne.depth_vars[k];
    double& d = state.depths[v.node].values(v.x, v.y);
    d = std::clamp(d + dx(np + k), kMinInvDepth, kMaxInvDepth);
  }
}

StepResult dba_step(const BAProblem& problem, BAState& state, double& lambda,
                    const LMOptions& options) {
  StepResult result;
  result.objective_before = evaluate_objective(problem, state);
  const NormalEquations ne = build_normal_equations(problem, state);

  std::optional<Eigen::VectorXd> dx = ne.solve_schur(lambda);
  for (int k = 0; !dx && k < options.max_lambda_doublings; ++k) {
    lambda *= 2;
    dx = ne.solve_schur(lambda);
  }
  if (!dx) throw StepFailedError("dba_step: reduced system singular after damping increases");

  BAState candidate = state;
  apply_update(ne, *dx, candidate);
  const double after = evaluate_objective(problem, candidate);
  result.update_norm = dx->norm();
  // Below the floor the objective is roundoff; an optimal state must still accept.
  if (std::isfinite(after) && (after <= result.objective_before || after <= kObjectiveFloor)) {
    state = std::move(candidate);
    result.accepted = true;
    result.objective_after = after;
    lambda = std::max(lambda * 0.5, 1e-12);
  } else {
    result.objective_after = result.objective_before;
    lambda *= 2;
  }
  result.lambda = lambda;
  return result;
}

RunResult run_dba(const BAProblem& problem, BAState& state, int max_steps, double tol,
                  const LMOptions& options) {
  if (max_steps < 1) throw ContractViolation("run_dba: max_steps must be >= 1");
  RunResult out;
  double lambda = options.lambda_init;
  out.final_objective = evaluate_objective(problem, state);
  for (int s = 0; s < max_steps; ++s) {
    const StepResult r = dba_step(problem, state, lambda, options);
    ++out.steps;
    if (!r.accepted) continue;
    out.accepted_objectives.push_back(r.objective_after);
    out.final_objective = r.objective_after;
    if (tol > 0 && r.objective_before - r.objective_after <= tol * r.objective_before) break;
  }
  return out;
}

}  // namespace thermap
