#include "thermap/dso_refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

constexpr double kDampingFloor = 1e-6;
constexpr double kMinTheta = 1e-6;
constexpr double kObjectiveFloor = 1e-20;

Vec2 masked_weight(const Vec2& w) {
  return Vec2(w.x() >= kMinFlowWeight ? w.x() : 0.0, w.y() >= kMinFlowWeight ? w.y() : 0.0);
}

std::vector<const Edge*> edges_from(const CovisibilityGraph& graph, int kf) {
  std::vector<const Edge*> out;
  for (const Edge& e : graph.edges()) {
    if (e.i != kf) continue;
    if (!e.flow) throw ContractViolation("dso: edge without flow prediction");
    out.push_back(&e);
  }
  return out;
}

bool has_prior(const Keyframe& k, int x, int y) {
  return k.mono.valid.same_shape(k.inv_depth.values) && k.mono.valid(x, y) && k.mono.values(x, y) > 0;
}

}  // namespace

PixelClassMask classify_pixels(const CovisibilityGraph& graph, int kf, double eta,
                               const PinholeIntrinsics& grid) {
  const Keyframe& ki = graph.keyframe(kf);
  const InverseDepthMap& di = ki.inv_depth;
  PixelClassMask out(di.width(), di.height(), PixelClass::kInvalid);

  double mean_depth = 0;
  int n = 0;
  for (std::size_t k = 0; k < di.values.size(); ++k) {
    if (!di.valid[k]) continue;
    mean_depth += 1.0 / di.values[k];
    ++n;
  }
  if (n == 0) return out;
  mean_depth /= n;
  const double threshold = eta * mean_depth;

  const std::vector<int> nbrs = graph.neighbors(kf);
  for (int y = 0; y < di.height(); ++y) {
    for (int x = 0; x < di.width(); ++x) {
      if (!di.is_valid(x, y)) continue;
      std::vector<Vec3> pts{ki.pose * backproject(Vec2(x, y), di.values(x, y), grid)};
      for (int j : nbrs) {
        const Keyframe& kj = graph.keyframe(j);
        const Vec3 pc = kj.pose.inverse() * pts.front();
        if (!(pc.z() > 1e-8)) continue;
        const Vec2 q = project(pc, grid).pixel;
        if (q.x() < 1 || q.y() < 1 || q.x() > grid.width - 2 || q.y() > grid.height - 2) continue;
        const int x0 = static_cast<int>(q.x());
        const int y0 = static_cast<int>(q.y());
        const InverseDepthMap& dj = kj.inv_depth;
        if (!dj.is_valid(x0, y0) || !dj.is_valid(x0 + 1, y0) || !dj.is_valid(x0, y0 + 1) ||
            !dj.is_valid(x0 + 1, y0 + 1)) {
          continue;
        }
        const double dq = std::clamp(sample_bilinear(dj.values, q.x(), q.y()), kMinInvDepth, kMaxInvDepth);
        pts.push_back(kj.pose * backproject(q, dq, grid));
      }
      if (pts.size() < 2) continue;
      double spread = 0;
      for (std::size_t a = 0; a < pts.size(); ++a) {
        for (std::size_t b = a + 1; b < pts.size(); ++b) spread = std::max(spread, (pts[a] - pts[b]).norm());
      }
      out(x, y) = spread < threshold ? PixelClass::kLow : PixelClass::kHigh;
    }
  }
  return out;
}

AffineFit affine_init(std::span<const double> d, std::span<const double> inv_mono) {
  if (d.size() != inv_mono.size()) throw ContractViolation("affine_init: size mismatch");
  AffineFit fit;
  fit.samples = static_cast<int>(d.size());
  if (d.empty()) {
    fit.degenerate = true;
    return fit;
  }
  const double n = static_cast<double>(d.size());
  double mx = 0, md = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    mx += inv_mono[k];
    md += d[k];
  }
  mx /= n;
  md /= n;
  double sxx = 0, sxd = 0, xx = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double ex = inv_mono[k] - mx;
    sxx += ex * ex;
    sxd += ex * (d[k] - md);
    xx += inv_mono[k] * inv_mono[k];
  }
  if (d.size() < 2 || !(sxx > 1e-14 * xx)) {
    fit.degenerate = true;
    fit.theta = 1.0;
    fit.gamma = md - mx;
    return fit;
  }
  fit.theta = sxd / sxx;
  if (!(fit.theta > 0)) {
    fit.theta = kMinTheta;
    fit.clamped = true;
  }
  fit.gamma = md - fit.theta * mx;
  return fit;
}

AffineFit affine_init(const InverseDepthMap& d, const MonoDepthMap& mono, const PixelClassMask& classes) {
  if (!mono.values.same_shape(d.values)) throw ContractViolation("affine_init: prior shape mismatch");
  const bool use_classes = classes.same_shape(d.values);
  std::vector<double> dl, xl, dobs, xobs, da, xa;
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      if (!d.is_valid(x, y) || !mono.valid(x, y) || !(mono.values(x, y) > 0)) continue;
      da.push_back(d.values(x, y));
      xa.push_back(1.0 / mono.values(x, y));
      if (!use_classes || classes(x, y) == PixelClass::kInvalid) continue;
      dobs.push_back(da.back());
      xobs.push_back(xa.back());
      if (classes(x, y) == PixelClass::kLow) {
        dl.push_back(da.back());
        xl.push_back(xa.back());
      }
    }
  }
  if (dl.size() >= 2) return affine_init(dl, xl);
  return dobs.size() >= 2 ? affine_init(dobs, xobs) : affine_init(da, xa);
}

double dso_objective(const CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                     const std::vector<int>& kfs, const DSOWeights& weights) {
  double total = 0;
  for (int kf : kfs) {
    const Keyframe& k = graph.keyframe(kf);
    const InverseDepthMap& d = k.inv_depth;
    for (const Edge* e : edges_from(graph, kf)) {
      const Keyframe& kj = graph.keyframe(e->j);
      for (int y = 0; y < d.height(); ++y) {
        for (int x = 0; x < d.width(); ++x) {
          if (!d.is_valid(x, y)) continue;
          const Vec2 w = masked_weight(e->flow->w(x, y));
          if (w.x() == 0 && w.y() == 0) continue;
          const auto r = pixel_residual(grid, k.pose, kj.pose, Vec2(x, y), d.values(x, y), e->flow->target(x, y));
          if (r) total += w.x() * r->x() * r->x() + w.y() * r->y() * r->y();
        }
      }
    }
    if (!k.classes.same_shape(d.values)) continue;
    for (int y = 0; y < d.height(); ++y) {
      for (int x = 0; x < d.width(); ++x) {
        if (!d.is_valid(x, y) || !has_prior(k, x, y)) continue;
        const PixelClass c = k.classes(x, y);
        if (c == PixelClass::kInvalid) continue;
        const double e = d.values(x, y) - (k.theta / k.mono.values(x, y) + k.gamma);
        total += (c == PixelClass::kHigh ? weights.alpha1 : weights.alpha2) * e * e;
      }
    }
  }
  return total;
}

DSOSystem build_dso_system(const CovisibilityGraph& graph, const PinholeIntrinsics& grid, int kf,
                           const DSOWeights& weights) {
  const Keyframe& k = graph.keyframe(kf);
  const InverseDepthMap& d = k.inv_depth;
  DSOSystem sys;
  if (!k.classes.same_shape(d.values)) return sys;
  const std::vector<const Edge*> edges = edges_from(graph, kf);

  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      if (!d.is_valid(x, y)) continue;
      const PixelClass c = k.classes(x, y);
      if (c == PixelClass::kInvalid) continue;
      const bool prior = has_prior(k, x, y);
      const double xm = prior ? 1.0 / k.mono.values(x, y) : 0.0;
      const double e = prior ? d.values(x, y) - (k.theta * xm + k.gamma) : 0.0;
      // Prior residual e = d - theta * xm - gamma; J = (1, -xm, -1).
      const Vec2 ja(-xm, -1.0);
      if (c == PixelClass::kLow) {
        if (!prior) continue;
        sys.haa += weights.alpha2 * ja * ja.transpose();
        sys.ba -= weights.alpha2 * ja * e;
        continue;
      }
      double hdd = 0, bd = 0;
      for (const Edge* edge : edges) {
        const Vec2 w = masked_weight(edge->flow->w(x, y));
        if (w.x() == 0 && w.y() == 0) continue;
        const PixelLinearization lin = linearize_pixel(grid, k.pose, graph.keyframe(edge->j).pose, Vec2(x, y),
                                                       d.values(x, y), edge->flow->target(x, y));
        if (!lin.valid) continue;
        hdd += lin.j_depth.dot(w.asDiagonal() * lin.j_depth);
        bd -= lin.j_depth.dot(w.asDiagonal() * lin.residual);
      }
      Vec2 hda = Vec2::Zero();
      if (prior) {
        hdd += weights.alpha1;
        bd -= weights.alpha1 * e;
        hda = weights.alpha1 * ja;
        sys.haa += weights.alpha1 * ja * ja.transpose();
        sys.ba -= weights.alpha1 * ja * e;
      }
      sys.vars.push_back({x, y});
      sys.hdd.push_back(hdd);
      sys.bd.push_back(bd);
      sys.hda.push_back(hda);
    }
  }
  return sys;
}

std::optional<std::pair<std::vector<double>, Vec2>> DSOSystem::solve(double lambda) const {
  const std::size_t n = vars.size();
  std::vector<double> inv(n);
  Mat2 s = haa;
  s(0, 0) += lambda * std::max(haa(0, 0), kDampingFloor);
  s(1, 1) += lambda * std::max(haa(1, 1), kDampingFloor);
  Vec2 rhs = ba;
  for (std::size_t k = 0; k < n; ++k) {
    inv[k] = 1.0 / (hdd[k] + lambda * std::max(hdd[k], kDampingFloor));
    s -= hda[k] * hda[k].transpose() * inv[k];
    rhs -= hda[k] * (bd[k] * inv[k]);
  }
  Eigen::LLT<Mat2> llt(s);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Vec2 da = llt.solve(rhs);
  if (!da.allFinite()) return std::nullopt;
  std::vector<double> dd(n);
  for (std::size_t k = 0; k < n; ++k) {
    dd[k] = (bd[k] - hda[k].dot(da)) * inv[k];
    if (!std::isfinite(dd[k])) return std::nullopt;
  }
  return std::make_pair(std::move(dd), da);
}

StepResult dso_step(CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                    const std::vector<int>& kfs, const DSOWeights& weights, double& lambda,
                    const LMOptions& options) {
  if (weights.alpha1 < 0 || weights.alpha2 < 0) throw ContractViolation("dso_step: negative weight");
  StepResult result;
  result.objective_before = dso_objective(graph, grid, kfs, weights);

  std::vector<DSOSystem> systems;
  for (int kf : kfs) systems.push_back(build_dso_system(graph, grid, kf, weights));

  using Solution = std::pair<std::vector<double>, Vec2>;
  std::vector<Solution> sol;
  for (int attempt = 0;; ++attempt) {
    sol.clear();
    bool ok = true;
    for (const DSOSystem& s : systems) {
      auto x = s.solve(lambda);
      if (!x) {
        ok = false;
        break;
      }
      sol.push_back(std::move(*x));
    }
    if (ok) break;
    if (attempt >= options.max_lambda_doublings) throw StepFailedError("dso_step: reduced system singular");
    lambda *= 2;
  }

  struct Saved {
    InverseDepthMap depth;
    double theta, gamma;
  };
  std::vector<Saved> saved;
  double sq = 0;
  for (std::size_t n = 0; n < kfs.size(); ++n) {
    Keyframe& k = graph.keyframe_state(kfs[n]);
    saved.push_back({k.inv_depth, k.theta, k.gamma});
    const DSOSystem& s = systems[n];
    const auto& [dd, da] = sol[n];
    for (std::size_t v = 0; v < s.vars.size(); ++v) {
      double& d = k.inv_depth.values(s.vars[v].x, s.vars[v].y);
      d = std::clamp(d + dd[v], kMinInvDepth, kMaxInvDepth);
      sq += dd[v] * dd[v];
    }
    k.theta = std::max(k.theta + da.x(), kMinTheta);
    k.gamma += da.y();
    sq += da.squaredNorm();
  }
  result.update_norm = std::sqrt(sq);
  const double after = dso_objective(graph, grid, kfs, weights);
  if (std::isfinite(after) && (after <= result.objective_before || after <= kObjectiveFloor)) {
    result.accepted = true;
    result.objective_after = after;
    lambda = std::max(lambda * 0.5, 1e-12);
  } else {
    for (std::size_t n = 0; n < kfs.size(); ++n) {
      Keyframe& k = graph.keyframe_state(kfs[n]);
      k.inv_depth = std::move(saved[n].depth);
      k.theta = saved[n].theta;
      k.gamma = saved[n].gamma;
    }
    result.objective_after = result.objective_before;
    lambda *= 2;
  }
  result.lambda = lambda;
  return result;
}

AlternationTrace alternate_dba_dso(CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                                   const std::vector<int>& free_pose_kfs,
                                   const std::vector<int>& free_depth_kfs,
                                   const AlternationOptions& options) {
  if (options.rounds < 1) throw ContractViolation("alternate_dba_dso: rounds must be >= 1");
  AlternationTrace trace;
  for (int round = 0; round < options.rounds; ++round) {
    if (options.dba_steps > 0) {
      GraphProblem gp = build_graph_problem(graph, grid, free_pose_kfs, free_depth_kfs);
      const RunResult r = run_dba(gp.problem, gp.state, options.dba_steps, 1e-12, options.lm);
      write_back(graph, gp);
      trace.dba_objectives.push_back(r.final_objective);
      trace.dba_steps += r.steps;
    }

    std::map<int, PixelClassMask> classes;
    for (int kf : free_depth_kfs) {
      Keyframe& k = graph.keyframe_state(kf);
      k.classes = classify_pixels(graph, kf, options.eta, grid);
      classes.emplace(kf, k.classes);
      if (!k.affine_initialized && k.mono.values.same_shape(k.inv_depth.values)) {
        const AffineFit fit = affine_init(k.inv_depth, k.mono, k.classes);
        k.theta = fit.theta;
        k.gamma = fit.gamma;
        k.affine_initialized = !fit.degenerate;
      }
    }
    trace.classes.push_back(std::move(classes));

    double lambda = options.lm.lambda_init;
    double obj = dso_objective(graph, grid, free_depth_kfs, options.weights);
    for (int s = 0; s < options.dso_steps; ++s) {
      const StepResult r = dso_step(graph, grid, free_depth_kfs, options.weights, lambda, options.lm);
      ++trace.dso_steps;
      if (!r.accepted) continue;
      obj = r.objective_after;
      if (r.objective_before - r.objective_after <= 1e-12 * r.objective_before) break;
    }
    trace.dso_objectives.push_back(obj);
  }
  return trace;
}

int fill_unobserved(Keyframe& kf) {
  if (!kf.affine_initialized || kf.classes.empty()) return 0;
  int filled = 0;
  for (std::size_t i = 0; i < kf.inv_depth.values.size(); ++i) {
    if (kf.classes[i] != PixelClass::kInvalid || !kf.mono.valid[i]) continue;
    kf.inv_depth.values[i] = std::clamp(kf.theta / kf.mono.values[i] + kf.gamma, kMinInvDepth, kMaxInvDepth);
    kf.inv_depth.valid[i] = 1;
    ++filled;
  }
  return filled;
}

}  // namespace thermap
