// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--allow-fail 7,...] [--cli PATH] [--work DIR]
//
// Exit status is 0 when every selected criterion passes or is listed in
// --allow-fail; those still print FAIL, tagged as known.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "../raster_fixtures.hpp"
#include "../test_scene.hpp"
#include "thermap/dataset_io.hpp"
#include "thermap/dba_solver.hpp"
#include "thermap/dso_refine.hpp"
#include "thermap/errors.hpp"
#include "thermap/gs_map.hpp"
#include "thermap/gs_raster.hpp"
#include "thermap/metrics.hpp"
#include "thermap/proxy_depth.hpp"

using namespace thermap;
using namespace thermap::test;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g(double v) { return fmt("%.3g", v); }

struct Context {
  std::string cli;
  fs::path work;
};

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central differences, h = 1e-4.

constexpr double kH = 1e-4;

double rel_err(double an, double fd, double floor) {
  return std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
}

Outcome gradients(const Context&) {
  int configs = 0;
  double worst_raster = 0, worst_dba = 0, worst_dso = 0;

  // Rasterizer: every parameter of every Gaussian against a random linear
  // functional of intensity, depth and alpha.
  std::mt19937_64 rng(5);
  const PinholeIntrinsics k = raster_camera();
  for (int c = 0; c < 50; ++c, ++configs) {
    GaussianMap map = random_scene(rng, 1 + c % 4, k);
    const SE3Pose pose = SE3Pose::exp((Vec6() << 0.02, 0.01, -0.03, 0.01, 0.02, -0.01).finished() * (c % 2));
    const Weights w = random_weights(rng, k);
    const GradientBundle gb = backward(render(map, pose, k), map, pose, k, w.wi, w.wd, w.wa);
    for (std::size_t i = 0; i < map.size(); ++i) {
      for (int p = 0; p < kGaussianParams; ++p) {
        GaussianMap plus = map, minus = map;
        GaussianParams a = map.gaussians[i].params(), b = a;
        a(p) += kH;
        b(p) -= kH;
        plus.gaussians[i].set_params(a);
        minus.gaussians[i].set_params(b);
        const double fd = (linear_objective(plus, pose, k, w) - linear_objective(minus, pose, k, w)) / (2 * kH);
        worst_raster = std::max(worst_raster, rel_err(gb.grads[i](p), fd, 1e-3));
      }
    }
  }

  // DBA: pose (both ends) and inverse-depth Jacobians of the reprojection residual.
  std::mt19937 r32(3);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(5, 35), dist(0.2, 1.0);
  const PinholeIntrinsics intr{40, 40, 20, 16, 40, 32};
  auto tangent = [&](double ts, double rs) {
    Vec6 xi;
    for (int j = 0; j < 3; ++j) xi(j) = ts * n(r32);
    for (int j = 3; j < 6; ++j) xi(j) = rs * n(r32);
    return xi;
  };
  for (int c = 0; c < 50; ++c, ++configs) {
    const SE3Pose src = SE3Pose::exp(tangent(0.3, 0.1));
    const SE3Pose dst = src.retract(tangent(0.1, 0.05));
    const Vec2 px(u(r32), u(r32) * 0.8), target(u(r32), u(r32));
    const double d = dist(r32);
    const PixelLinearization lin = linearize_pixel(intr, src, dst, px, d, target);
    if (!lin.valid) return {false, "invalid DBA linearization in config " + std::to_string(c)};
    auto res = [&](const SE3Pose& a, const SE3Pose& b, double dd) { return *pixel_residual(intr, a, b, px, dd, target); };
    Mat26 fs, fdst;
    for (int j = 0; j < 6; ++j) {
      Vec6 e = Vec6::Zero();
      e(j) = kH;
      fs.col(j) = (res(src.retract(e), dst, d) - res(src.retract(-e), dst, d)) / (2 * kH);
      fdst.col(j) = (res(src, dst.retract(e), d) - res(src, dst.retract(-e), d)) / (2 * kH);
    }
    const Vec2 fdd = (res(src, dst, d + kH) - res(src, dst, d - kH)) / (2 * kH);
    worst_dba = std::max({worst_dba, (lin.j_src - fs).norm() / fs.norm(), (lin.j_dst - fdst).norm() / fdst.norm(),
                          (lin.j_depth - fdd).norm() / fdd.norm()});
  }

  // DSO: the right-hand side is minus half the gradient of the objective in
  // (theta, gamma) and the high-error depths.
  const auto gt = room_truth(orbit_poses(2, 3));
  const SyntheticFlowOracle oracle(gt, SyntheticFlowOptions{0.3, 21});
  CovisibilityGraph graph = truth_graph(*gt, oracle, 2);
  const PinholeIntrinsics grid = gt->grid_intrinsics();
  std::uniform_real_distribution<double> th(1.0, 3.0), ga(-0.1, 0.2), eta(0.005, 0.05);
  for (int c = 0; c < 50; ++c, ++configs) {
    const int kf = c % 2;
    Keyframe& key = graph.keyframe_state(kf);
    key.classes = classify_pixels(graph, kf, eta(r32), grid);
    key.theta = th(r32);
    key.gamma = ga(r32);
    const DSOWeights w{0.01, 0.1};
    const DSOSystem sys = build_dso_system(graph, grid, kf, w);
    auto objective = [&] { return dso_objective(graph, grid, {kf}, w); };
    auto check = [&](double& v, double analytic) {
      const double v0 = v;
      v = v0 + kH;
      const double fp = objective();
      v = v0 - kH;
      const double fm = objective();
      v = v0;
      const double grad = -0.5 * (fp - fm) / (2 * kH);
      worst_dso = std::max(worst_dso, rel_err(analytic, grad, 1e-3));
    };
    check(key.theta, sys.ba(0));
    check(key.gamma, sys.ba(1));
    if (sys.vars.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, sys.vars.size() - 1);
    for (int s = 0; s < 4; ++s) {
      const std::size_t v = pick(r32);
      check(key.inv_depth.values(sys.vars[v].x, sys.vars[v].y), sys.bd[v]);
    }
  }

  const double worst = std::max({worst_raster, worst_dba, worst_dso});
  return {worst < 1e-3, std::to_string(configs) + " configs, max rel err raster " + g(worst_raster) + " dba " +
                            g(worst_dba) + " dso " + g(worst_dso)};
}

// ---------------------------------------------------------------------------
// 2. Tiled rasterizer against brute-force compositing.

Outcome raster_oracle(const Context&) {
  std::mt19937_64 rng(11);
  const PinholeIntrinsics k = raster_camera(64, 64);
  std::uniform_int_distribution<int> count(1, 64);
  double worst = 0;
  for (int scene = 0; scene < 20; ++scene) {
    const GaussianMap map = random_scene(rng, count(rng), k, 0.99);
    const SE3Pose pose = SE3Pose::exp((Vec6() << 0.1, -0.05, 0.1, 0.02, -0.03, 0.01).finished() * (scene % 3));
    const RenderOutput tiled = render(map, pose, k);
    const BruteForce ref = brute_force_render(map, pose, k);
    for (std::size_t i = 0; i < ref.intensity.size(); ++i) {
      worst = std::max({worst, std::abs(tiled.intensity[i] - ref.intensity[i]),
                        std::abs(tiled.depth[i] - ref.depth[i]), std::abs(tiled.alpha[i] - ref.alpha[i])});
    }
  }
  return {worst < 1e-6, "20 scenes, max abs pixel error " + g(worst)};
}

// ---------------------------------------------------------------------------
// 3. DBA from perturbed poses and depths back to ground truth.

Outcome dba_convergence(const Context&) {
  const auto gt = room_truth(orbit_poses(4, 3));
  const SyntheticFlowOracle oracle(gt, {});
  const CovisibilityGraph graph = truth_graph(*gt, oracle, 4);
  const PinholeIntrinsics grid = gt->grid_intrinsics();
  GraphProblem gp = build_graph_problem(graph, grid, {1, 2, 3}, {0, 1, 2, 3});

  std::vector<Vec3> ref;
  for (int k = 0; k < 4; ++k) ref.push_back(gt->poses.at(k).translation);
  double scale = 0;
  for (const Vec3& a : ref) {
    for (const Vec3& b : ref) scale = std::max(scale, (a - b).norm());
  }

  std::mt19937 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int k = 1; k < 4; ++k) {
    Vec6 xi = Vec6::Zero();
    xi.head<3>() = 0.02 * scale * Vec3(n(rng), n(rng), n(rng)).normalized();
    xi.tail<3>() = (M_PI / 180) * Vec3(n(rng), n(rng), n(rng)).normalized();
    gp.state.poses[k] = gp.state.poses[k].retract(xi);
  }
  for (auto& d : gp.state.depths) {
    for (auto& v : d.values) v *= 1 + 0.01 * n(rng);
  }
  const RunResult rr = run_dba(gp.problem, gp.state, 50, 1e-14);

  std::vector<Vec3> est;
  for (int k = 0; k < 4; ++k) est.push_back(gp.state.poses[k].translation);
  const Sim3Transform a = sim3_umeyama(est, ref);
  // Depth is only defined by the data where some edge observes the pixel;
  // the rest keep their perturbation.
  std::vector<Mask> observed;
  for (int k = 0; k < 4; ++k) observed.emplace_back(grid.width, grid.height, 0);
  for (const BAEdge& e : gp.problem.edges) {
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        if (e.flow->w(x, y).maxCoeff() > kMinFlowWeight) observed[e.src](x, y) = 1;
      }
    }
  }
  double t_sq = 0, r_sq = 0, d_sq = 0;
  std::size_t d_n = 0, d_total = 0;
  for (int k = 0; k < 4; ++k) {
    const SE3Pose aligned = a.apply(gp.state.poses[k]);
    t_sq += (aligned.translation - ref[k]).squaredNorm();
    r_sq += std::pow(aligned.rotation.angularDistance(gt->poses.at(k).rotation), 2);
    // Aligned inverse depth is the estimate divided by the similarity scale.
    const InverseDepthMap truth = gt->grid_inverse_depth(k);
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
      ++d_total;
      if (!observed[k][i]) continue;
      d_sq += std::pow((gp.state.depths[k].values[i] / a.scale - truth.values[i]) / truth.values[i], 2);
      ++d_n;
    }
  }
  const double t_rmse = std::sqrt(t_sq / 4) / scale, r_rmse = std::sqrt(r_sq / 4),
               d_rmse = std::sqrt(d_sq / static_cast<double>(d_n));
  return {t_rmse < 1e-3 && r_rmse < 1e-3 && d_rmse < 1e-3,
          std::to_string(rr.steps) + " steps, pose RMSE " + g(t_rmse) + " of scale, rotation " + g(r_rmse) +
              " rad, depth rel RMSE " + g(d_rmse) + " over " + std::to_string(d_n) + "/" +
              std::to_string(d_total) + " observed pixels"};
}

// ---------------------------------------------------------------------------
// 4. Alternation with an exact affine prior and every pixel high-error.

Outcome dso_closure(const Context&) {
  const int n = 4;
  const auto gt = room_truth(orbit_poses(n, 3));
  const SyntheticFlowOracle oracle(gt, {});
  CovisibilityGraph graph = truth_graph(*gt, oracle, n, 2.0, 0.1);
  const PinholeIntrinsics grid = gt->grid_intrinsics();
  std::mt19937 rng(4);
  std::normal_distribution<double> noise(0, 0.02);
  std::vector<int> all;
  for (int k = 0; k < n; ++k) {
    all.push_back(k);
    Keyframe& kf = graph.keyframe_state(k);
    for (auto& v : kf.inv_depth.values) v *= 1 + noise(rng);
    kf.theta = 1.0;
    kf.gamma = 0.0;
    kf.affine_initialized = false;
  }
  AlternationOptions opt;
  opt.eta = 0;  // nothing passes the consistency test: all observed pixels high
  opt.rounds = 4;
  opt.dba_steps = 10;
  opt.dso_steps = 20;
  // Poses stay at ground truth; depths and the affine parameters are free.
  alternate_dba_dso(graph, grid, {}, all, opt);

  double affine_err = 0, proxy_err = 0;
  int low = 0;
  for (int k : all) {
    const Keyframe& kf = graph.keyframe(k);
    low += static_cast<int>(std::count(kf.classes.begin(), kf.classes.end(), PixelClass::kLow));
    affine_err = std::max({affine_err, std::abs(kf.theta - 2.0), std::abs(kf.gamma - 0.1)});
    const ProxyDepthMap proxy = build_proxy(kf, gt->intrinsics.width, gt->intrinsics.height);
    const InverseDepthMap truth = gt->grid_inverse_depth(k);
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
      proxy_err = std::max(proxy_err, std::abs(proxy.grid.values[i] - truth.values[i]));
    }
  }
  return {affine_err < 1e-6 && proxy_err < 1e-6 && low == 0,
          "max |theta,gamma - truth| " + g(affine_err) + ", max proxy error " + g(proxy_err) + ", low pixels " +
              std::to_string(low)};
}

// ---------------------------------------------------------------------------
// 5. Loss weights.

Outcome loss_weights(const Context&) {
  const double total = combine_loss(0.1, 0.2, 0.05, LossWeights{0.2, 0.2});
  // The full loss must report the same combination of its own terms.
  std::mt19937_64 rng(2);
  const PinholeIntrinsics k = raster_camera(32, 32);
  const GaussianMap map = random_scene(rng, 12, k, 0.99);
  const RenderOutput out = render(map, SE3Pose(), k);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  GrayImage target(k.width, k.height);
  Grid<double> proxy(k.width, k.height);
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] = u(rng);
    proxy[i] = 1.0 / (2 + 2 * u(rng));
  }
  const LossTerms t = loss(out, target, proxy, LossWeights{0.2, 0.2}).terms;
  const double recombined = 0.8 * t.color + 0.2 * t.ssim + 0.2 * t.depth;
  const bool ok = std::abs(total - 0.13) <= 1e-15 && std::abs(t.total - recombined) <= 1e-15;
  return {ok, "total " + fmt("%.17g", total)};
}

// ---------------------------------------------------------------------------
// 6. Pruning policy.

Outcome pruning(const Context&) {
  const DensifyConfig cfg;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  GaussianMap map;
  const int current = 10;
  for (int k = 0; k < 5000; ++k) {
    Gaussian3D gs;
    gs.opacity_logit = logit(0.001 + 0.998 * u(rng));
    gs.log_scale = Vec3::Constant(-6 + 5 * u(rng));
    gs.created_at = static_cast<int>(u(rng) * (current + 1));
    gs.observations = static_cast<int>(u(rng) * 6);
    map.add(gs);
  }
  prune(map, cfg, current);
  int bad = 0;
  for (const Gaussian3D& gs : map.gaussians) {
    const bool grace = current - gs.created_at < cfg.min_observations;
    bad += gs.opacity() < cfg.opacity_prune;
    bad += gs.scale().maxCoeff() > cfg.extent_prune_scale && gs.opacity() < 0.5;
    bad += !grace && gs.observations < cfg.min_observations;
  }
  GaussianMap old;
  Gaussian3D gs;
  gs.opacity_logit = logit(0.9);
  gs.log_scale.setConstant(std::log(0.005));
  gs.created_at = 0;
  gs.observations = 2;
  old.add(gs);
  const int removed_old = prune(old, cfg, 3);
  GaussianMap fresh;
  gs.created_at = 1;
  gs.observations = 0;
  fresh.add(gs);
  const int removed_fresh = prune(fresh, cfg, 3);
  return {bad == 0 && removed_old == 1 && removed_fresh == 0,
          std::to_string(map.size()) + " survivors, rule violations " + std::to_string(bad) +
              ", 3-keyframe-old with 2 observations removed: " + (removed_old ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// CLI helpers for 7 and 9.

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> read_metrics(const fs::path& p) {
  std::map<std::string, std::string> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key, seq, value;
    if (std::getline(ss, key, '\t') && std::getline(ss, seq, '\t') && std::getline(ss, value)) out[key] = value;
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct RunOutcome {
  int code = -1;
  double seconds = 0;
  std::map<std::string, std::string> metrics;
};

RunOutcome run_cli(const Context& ctx, const fs::path& dataset, const fs::path& out, const std::string& extra) {
  fs::remove_all(out);
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome r;
  r.code = shell(ctx.cli + " run --quiet --deterministic --seed 1 --dataset " + dataset.string() + " --out " +
                 out.string() + " " + extra + " > " + (out.string() + ".stdout") + " 2> " + (out.string() + ".stderr"));
  r.seconds = seconds_since(t0);
  r.metrics = read_metrics(out / "metrics.txt");
  return r;
}

double metric(const RunOutcome& r, const std::string& key) {
  const auto it = r.metrics.find(key);
  return it == r.metrics.end() ? std::nan("") : std::stod(it->second);
}

// ---------------------------------------------------------------------------
// 7. End-to-end synthetic orbit. The base run uses 8-bit raws directly; its
// ATE, PSNR and SSIM carry the thresholds. The 14-bit FieldScale run must
// match its ATE. FieldScale quality is reported alongside: its per-frame
// adaptive mapping makes the targets differ between views.

Outcome end_to_end(const Context& ctx) {
  const double radius = 3.0;
  const fs::path raw14 = ctx.work / "orbit14", raw8 = ctx.work / "orbit8";
  for (const auto& [dir, bits] : {std::pair{raw14, 14}, std::pair{raw8, 8}}) {
    fs::remove_all(dir);
    const int code = shell(ctx.cli + " synth --out " + dir.string() + " --frames 60 --seed 1 --bit-depth " +
                           std::to_string(bits));
    if (code != 0) return {false, "synth exited " + std::to_string(code)};
  }
  const RunOutcome direct = run_cli(ctx, raw8, ctx.work / "run_direct", "--enhance none");
  const RunOutcome field = run_cli(ctx, raw14, ctx.work / "run_fieldscale", "--enhance fieldscale");
  if (direct.code != 0 || field.code != 0) {
    return {false, "run exited " + std::to_string(direct.code) + " / " + std::to_string(field.code)};
  }
  const double ate = metric(direct, "ate_rmse"), ate_fs = metric(field, "ate_rmse");
  const double psnr_v = metric(direct, "psnr"), ssim_v = metric(direct, "ssim");
  const double ratio = std::abs(ate_fs - ate) / ate;
  const bool ate_ok = ate < 0.01 * radius;
  const bool quality_ok = psnr_v > 30 && ssim_v > 0.95;
  const bool match_ok = ratio < 0.1;
  const bool time_ok = direct.seconds < 900 && field.seconds < 900;
  return {ate_ok && quality_ok && match_ok && time_ok,
          "8-bit direct: ATE " + g(ate / radius) + " of radius, PSNR " + fmt("%.2f", psnr_v) + " dB, SSIM " +
              fmt("%.3f", ssim_v) + ", " + fmt("%.0f", direct.seconds) + " s; 14-bit fieldscale: ATE diff " +
              fmt("%.1f", 100 * ratio) + "%, PSNR " + fmt("%.2f", metric(field, "psnr")) + " dB, SSIM " +
              fmt("%.3f", metric(field, "ssim")) + ", " + fmt("%.0f", field.seconds) + " s"};
}

// ---------------------------------------------------------------------------
// 8. Metric sanity.

Outcome metric_sanity(const Context&) {
  Trajectory ref;
  for (int k = 0; k < 40; ++k) {
    const double a = 0.15 * k;
    ref.push_back({0.05 * k, SE3Pose(Quat(Eigen::AngleAxisd(a, Vec3::UnitY())),
                                     Vec3(3 * std::cos(a), 0.2 * std::sin(2 * a), 3 * std::sin(a)))});
  }
  std::mt19937 rng(8);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Sim3Transform s;
    s.scale = std::exp(n(rng));
    s.rotation = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
    s.translation = 10 * Vec3(n(rng), n(rng), n(rng));
    Trajectory moved = ref;
    for (auto& p : moved) p.pose = s.apply(p.pose);
    worst = std::max(worst, ate_rmse(moved, ref));
  }
  GrayImage x(48, 40);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : x) v = u(rng);
  const double s = ssim(x, x), p = psnr(x, x);
  return {worst < 1e-9 && s == 1.0 && p == 100.0,
          "max ATE under Sim(3) " + g(worst) + ", SSIM(x,x) " + fmt("%.17g", s) + ", PSNR(x,x) " + g(p)};
}

// ---------------------------------------------------------------------------
// 9. Determinism of the full run.

Outcome determinism(const Context& ctx) {
  const fs::path seq = ctx.work / "det_seq";
  fs::remove_all(seq);
  if (shell(ctx.cli + " synth --out " + seq.string() +
            " --frames 20 --width 160 --height 128 --focal 150 --arc 90 --seed 4") != 0) {
    return {false, "synth failed"};
  }
  const RunOutcome a = run_cli(ctx, seq, ctx.work / "det_a", "");
  const RunOutcome b = run_cli(ctx, seq, ctx.work / "det_b", "");
  if (a.code != 0 || b.code != 0) return {false, "run exited " + std::to_string(a.code) + " / " + std::to_string(b.code)};
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::string differing;
  for (const char* f : {"trajectory.txt", "map.ply", "metrics.txt"}) {
    const std::string x = bytes(ctx.work / "det_a" / f), y = bytes(ctx.work / "det_b" / f);
    if (x.empty() || x != y) differing += std::string(" ") + f;
  }
  return {differing.empty(), differing.empty() ? "trajectory, PLY and metrics byte-identical"
                                               : "differing:" + differing};
}

// ---------------------------------------------------------------------------
// 10. Format fidelity.

Outcome formats(const Context& ctx) {
  const fs::path dir = ctx.work / "formats";
  fs::create_directories(dir);
  std::mt19937 rng(10);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(-100, 100);

  Trajectory t;
  double stamp = 1.7e9;
  for (int k = 0; k < 200; ++k) {
    stamp += 0.01 + std::abs(n(rng));
    t.push_back({std::round(stamp * 1e6) / 1e6,
                 SE3Pose(Quat(n(rng), n(rng), n(rng), n(rng)).normalized(), Vec3(u(rng), u(rng), u(rng)))});
  }
  write_tum_trajectory(t, dir / "t.txt");
  const Trajectory tr = read_tum_trajectory(dir / "t.txt");
  double tum_err = tr.size() == t.size() ? 0 : 1;
  for (std::size_t k = 0; k < std::min(t.size(), tr.size()); ++k) {
    tum_err = std::max({tum_err, std::abs(t[k].timestamp - tr[k].timestamp),
                        (t[k].pose.translation - tr[k].pose.translation).cwiseAbs().maxCoeff(),
                        (t[k].pose.rotation.coeffs() - tr[k].pose.rotation.coeffs()).cwiseAbs().maxCoeff()});
  }

  PfmImage img{33, 21, 1, std::vector<float>(33 * 21)};
  std::uniform_int_distribution<std::uint32_t> bits;
  for (float& f : img.data) {
    do {
      f = std::bit_cast<float>(bits(rng));
    } while (std::isnan(f));
  }
  pfm_write(img, dir / "x.pfm");
  const PfmImage back = pfm_read(dir / "x.pfm");
  const bool pfm_ok = back.width == img.width && back.height == img.height &&
                      std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0;

  std::vector<Gaussian3D> gs(100);
  for (Gaussian3D& x : gs) {
    x.mu = Vec3(n(rng), n(rng), n(rng));
    x.log_scale = Vec3(n(rng), n(rng), n(rng));
    x.rotation = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
    x.opacity_logit = n(rng);
    x.color = u(rng);
  }
  ply_write(gs, dir / "a.ply");
  ply_write(ply_read(dir / "a.ply"), dir / "b.ply");
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::vector<Gaussian3D> gb = ply_read(dir / "a.ply");
  bool ply_ok = gb.size() == gs.size() && bytes(dir / "a.ply") == bytes(dir / "b.ply");
  for (std::size_t k = 0; ply_ok && k < gs.size(); ++k) {
    ply_ok = gb[k].mu.x() == double(float(gs[k].mu.x())) && gb[k].color == double(float(gs[k].color));
  }

  // Malformed inputs must fail with the offending line or byte.
  int positional = 0, cases = 0;
  auto expect = [&](const std::string& name, const std::string& content, auto reader, const std::string& where) {
    ++cases;
    std::ofstream(dir / name, std::ios::binary) << content;
    try {
      reader(dir / name);
    } catch (const ParseError& e) {
      if (std::string(e.what()).find(where) != std::string::npos) ++positional;
    }
  };
  auto tum = [](const fs::path& p) { read_tum_trajectory(p); };
  auto pfm = [](const fs::path& p) { pfm_read(p); };
  auto ply = [](const fs::path& p) { ply_read(p); };
  expect("short.txt", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n", tum, "line 2");
  expect("nan.txt", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n2 0 x 0 0 0 0 1\n", tum, "line 3");
  expect("be.pfm", "Pf\n1 1\n1.0\n" + std::string(4, '\0'), pfm, "byte 6");
  expect("trunc.pfm", "Pf\n2 1\n-1.0\n" + std::string(4, '\0'), pfm, "byte 12");
  const std::string ply_ok_bytes = bytes(dir / "a.ply");
  expect("trunc.ply", ply_ok_bytes.substr(0, ply_ok_bytes.size() - 1), ply,
         "byte " + std::to_string(ply_ok_bytes.find("end_header\n") + 11));
  const bool ok = tum_err <= 1e-8 && pfm_ok && ply_ok && positional == cases;
  return {ok, "TUM max err " + g(tum_err) + ", PFM " + (pfm_ok ? "bitwise" : "MISMATCH") + ", PLY " +
                  (ply_ok ? "ok" : "MISMATCH") + ", positional diagnostics " + std::to_string(positional) + "/" +
                  std::to_string(cases)};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.insert(std::stoi(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
#ifdef THERMAP_CLI
  ctx.cli = THERMAP_CLI;
#endif
  ctx.work = fs::current_path() / "acceptance_work";
  std::set<int> only, allowed;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i], v = argv[i + 1];
    if (a == "--only") {
      only = parse_list(v);
    } else if (a == "--allow-fail") {
      allowed = parse_list(v);
    } else if (a == "--cli") {
      ctx.cli = v;
    } else if (a == "--work") {
      ctx.work = v;
    } else {
      std::fprintf(stderr, "unknown option %s\n", a.c_str());
      return 3;
    }
  }
  fs::create_directories(ctx.work);

  struct Criterion {
    int id;
    const char* name;
    double budget;  // seconds; <= 0 when the criterion times its own parts
    std::function<Outcome(const Context&)> run;
  };
  const std::vector<Criterion> all{
      {1, "analytic gradients", 60, gradients},
      {2, "tiled render vs brute force", 30, raster_oracle},
      {3, "DBA convergence", 120, dba_convergence},
      {4, "DSO closure", 60, dso_closure},
      {5, "loss weights", 0, loss_weights},
      {6, "pruning policy", 0, pruning},
      {7, "end-to-end synthetic orbit", 0, end_to_end},
      {8, "metric sanity", 0, metric_sanity},
      {9, "determinism", 0, determinism},
      {10, "format fidelity", 0, formats},
  };

  bool ok = true;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.budget > 0 && secs >= c.budget) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", c.budget) + " s budget";
    }
    const bool known = !o.pass && allowed.count(c.id);
    std::printf("criterion %2d %s  %s: %s (%.1f s)\n", c.id, o.pass ? "PASS" : (known ? "FAIL (known)" : "FAIL"),
                c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    ok = ok && (o.pass || known);
  }
  return ok ? 0 : 1;
}
