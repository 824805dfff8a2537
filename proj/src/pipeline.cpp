#include "thermap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <span>

#include "thermap/dso_refine.hpp"
#include "thermap/errors.hpp"
#include "thermap/frame_graph.hpp"
#include "thermap/gs_raster.hpp"
#include "thermap/map_optimizer.hpp"
#include "thermap/metrics.hpp"
#include "thermap/oracles.hpp"
#include "thermap/proxy_depth.hpp"

namespace thermap {

namespace {

struct MappingKeyframe {
  int kf_id;
  Grid<double> proxy;  // full-resolution inverse depth
};

std::vector<int> last_n(int size, int n) {
  std::vector<int> out;
  for (int k = std::max(0, size - n); k < size; ++k) out.push_back(k);
  return out;
}

// Fraction of the keyframe's proxy points seen by a window view: landing
// inside it with depth within 10% of that view's own proxy.
double window_overlap(const CovisibilityGraph& graph, const ProxyDepthMap& proxy, int kf,
                      std::span<const MappingKeyframe> window, const PinholeIntrinsics& grid) {
  if (window.empty()) return 0.0;
  const Keyframe& k = graph.keyframe(kf);
  std::vector<SE3Pose> t_cw;
  std::vector<InverseDepthMap> depth;
  for (const MappingKeyframe& m : window) {
    t_cw.push_back(graph.keyframe(m.kf_id).pose.inverse());
    depth.push_back(graph.keyframe(m.kf_id).inv_depth);
  }
  int seen = 0;
  for (int y = 0; y < proxy.grid.height(); ++y) {
    for (int x = 0; x < proxy.grid.width(); ++x) {
      const Vec3 pw = k.pose * backproject(Vec2(x, y), proxy.grid.values(x, y), grid);
      for (std::size_t v = 0; v < t_cw.size(); ++v) {
        const Vec3 pc = t_cw[v] * pw;
        if (pc.z() <= 1e-8) continue;
        const Vec2 px = project(pc, grid).pixel;
        if (!grid.contains(px)) continue;
        const int u = static_cast<int>(std::lround(px.x()));
        const int w = static_cast<int>(std::lround(px.y()));
        const double z_there = 1.0 / depth[v].values(u, w);
        if (std::abs(pc.z() - z_there) <= 0.1 * z_there) {
          ++seen;
          break;
        }
      }
    }
  }
  return static_cast<double>(seen) / static_cast<double>(proxy.grid.values.size());
}

double scene_extent(const CovisibilityGraph& graph, const std::vector<MappingKeyframe>& mkfs) {
  Vec3 c = Vec3::Zero();
  for (const MappingKeyframe& m : mkfs) c += graph.keyframe(m.kf_id).pose.translation;
  c /= static_cast<double>(mkfs.size());
  double r = 0;
  for (const MappingKeyframe& m : mkfs) r = std::max(r, (graph.keyframe(m.kf_id).pose.translation - c).norm());
  // Mean depth of the first mapping keyframe keeps the extent sane for short baselines.
  double depth = 0;
  const Grid<double>& p = mkfs.front().proxy;
  for (double v : p) depth += 1.0 / v;
  depth /= static_cast<double>(p.size());
  return std::max(1.1 * r, depth);
}

std::string png_name(int frame) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "render_%06d.png", frame);
  return buf;
}

}  // namespace

GroundTruth load_groundtruth(const SequenceManifest& seq) {
  GroundTruth gt;
  gt.intrinsics = seq.intrinsics;
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    const FrameRecord& f = seq.frames[k];
    if (f.gt_pose) gt.poses[static_cast<int>(k)] = *f.gt_pose;
    if (f.gt_depth_path) {
      Grid<double> d = from_pfm(pfm_read(*f.gt_depth_path));
      if (d.width() != seq.intrinsics.width || d.height() != seq.intrinsics.height) {
        throw ParseError(f.gt_depth_path->string(), ParseError::Unit::kByte, 0, "depth size differs from calib");
      }
      gt.depths[static_cast<int>(k)] = std::move(d);
    }
  }
  return gt;
}

PipelineResult run_pipeline(const SequenceManifest& seq, const RunConfig& cfg,
                            const std::filesystem::path& out_dir, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  auto say = [&](const std::string& msg) {
    if (!log) return;
    const double s = std::chrono::duration<double>(Clock::now() - t_start).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%7.1fs] ", s);
    *log << buf << msg << std::endl;
  };

  const PinholeIntrinsics intr = seq.intrinsics;
  const PinholeIntrinsics grid = intr.downscaled(8);
  const int n_frames = static_cast<int>(seq.frames.size());
  if (n_frames < 2) throw ConfigError("sequence needs at least two frames");

  std::shared_ptr<const FlowOracle> flow_oracle;
  std::shared_ptr<const DepthOracle> depth_oracle;
  if (cfg.oracle == OracleMode::kSynthetic) {
    auto gt = std::make_shared<GroundTruth>(load_groundtruth(seq));
    if (gt->poses.empty() || gt->depths.empty()) {
      throw ConfigError("synthetic oracle needs groundtruth.txt and gt/depth_<k>.pfm in the dataset");
    }
    flow_oracle = std::make_shared<SyntheticFlowOracle>(gt, SyntheticFlowOptions{cfg.flow_sigma, cfg.seed, 0.02});
    depth_oracle = std::make_shared<SyntheticDepthOracle>(
        gt, SyntheticDepthOptions{cfg.mono_theta, cfg.mono_gamma, cfg.mono_sigma, cfg.seed});
  } else {
    if (cfg.oracle_dir.empty()) throw ConfigError("file oracle needs oracle_dir");
    OraclePair p = load_file_oracle(cfg.oracle_dir);
    flow_oracle = p.flow;
    depth_oracle = p.depth;
  }

  std::vector<GrayImage> images(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    RawThermalImage raw = png_read_raw(seq.frames[k].image_path);
    raw.bit_depth = seq.bit_depth;
    raw.validate();
    if (raw.values.width() != intr.width || raw.values.height() != intr.height) {
      throw IoError("image size differs from calib: " + seq.frames[k].image_path.string());
    }
    images[k] = enhance(raw, cfg.enhance, cfg.fieldscale);
  }
  say("enhanced " + std::to_string(n_frames) + " frames (" + to_string(cfg.enhance) + ")");

  PipelineResult result;
  CovisibilityGraph graph(cfg.graph);
  Tracker tracker(*flow_oracle, grid, cfg.tracker);
  MapperOptions mopts = cfg.mapper;
  mopts.seed = cfg.seed;
  MapOptimizer mapper(intr, mopts);
  GaussianMap& map = result.map;
  std::vector<MappingKeyframe> mkfs;
  DensifyConfig prune_cfg = cfg.mapper.densify;

  // Pose of every tracked frame relative to its reference keyframe.
  struct Placement {
    int ref;
    SE3Pose rel;
    bool keyframe;
  };
  std::map<int, Placement> placed;

  auto make_keyframe = [&](int frame, const SE3Pose& pose, InverseDepthMap depth) {
    Keyframe kf;
    kf.frame_index = frame;
    kf.timestamp = seq.frames[frame].timestamp;
    kf.pose = pose;
    kf.image = images[frame];
    kf.mono = depth_oracle->predict_depth(frame);
    if (depth.values.empty()) {
      depth = InverseDepthMap(grid.width, grid.height);
      for (std::size_t i = 0; i < depth.values.size(); ++i) {
        depth.valid[i] = kf.mono.valid[i];
        depth.values[i] = kf.mono.valid[i] ? 1.0 / kf.mono.values[i] : 1.0;
      }
      depth.clamp();
    }
    kf.inv_depth = std::move(depth);
    return kf;
  };

  auto map_keyframe = [&](int kf_id) {
    const Keyframe& kf = graph.keyframe(kf_id);
    const ProxyDepthMap proxy = build_proxy(kf, intr.width, intr.height);
    // Observation bookkeeping and coverage from the current map.
    const RenderOutput seen = render(map, kf.pose, intr);
    update_observations(map, seen.contributed);

    const std::size_t first = mkfs.size() > static_cast<std::size_t>(cfg.map_window) ? mkfs.size() - cfg.map_window : 0;
    const double overlap =
        window_overlap(graph, proxy, kf_id, std::span<const MappingKeyframe>(mkfs).subspan(first), grid);
    if (!mkfs.empty() && overlap >= cfg.window_overlap) return;

    Mask covered(intr.width, intr.height, 0);
    for (std::size_t i = 0; i < covered.size(); ++i) covered[i] = seen.alpha[i] > 0.5;
    std::vector<Gaussian3D> born =
        spawn_from_keyframe(kf.pose, kf.image, proxy.full, intr, cfg.spawn_stride, kf_id, &covered);
    for (Gaussian3D& g : born) g.observations = 1;
    map.add(born);
    mkfs.push_back({kf_id, proxy.full});

    for (std::size_t m = mkfs.size() > static_cast<std::size_t>(cfg.map_window) ? mkfs.size() - cfg.map_window : 0;
         m < mkfs.size(); ++m) {
      mkfs[m].proxy = build_proxy(graph.keyframe(mkfs[m].kf_id), intr.width, intr.height).full;
    }
    const double extent = scene_extent(graph, mkfs);
    prune_cfg.scale_split_threshold = cfg.mapper.densify.scale_split_threshold * extent;
    prune_cfg.extent_prune_scale = cfg.mapper.densify.extent_prune_scale * extent;
    if (cfg.mapper.densify_enabled) prune(map, prune_cfg, kf_id);

    std::vector<TrainView> views;
    for (std::size_t m = mkfs.size() > static_cast<std::size_t>(cfg.map_window) ? mkfs.size() - cfg.map_window : 0;
         m < mkfs.size(); ++m) {
      const Keyframe& k = graph.keyframe(mkfs[m].kf_id);
      views.push_back({k.pose, &k.image, &mkfs[m].proxy, k.id});
    }
    const std::vector<double> trace = mapper.optimize(map, views, cfg.map_iterations_per_kf, extent, kf_id);
    char buf[128];
    std::snprintf(buf, sizeof buf, "mapped kf %d: %zu gaussians, loss %.4f", kf_id, map.size(),
                  trace.empty() ? 0.0 : trace.back());
    say(buf);
  };

  // Keyframe 0.
  graph.add_keyframe(make_keyframe(0, SE3Pose::identity(), {}));
  tracker.record(0, SE3Pose::identity());
  placed[0] = {0, SE3Pose::identity(), true};
  map_keyframe(0);

  for (int f = 1; f < n_frames; ++f) {
    TrackResult tr;
    try {
      tr = tracker.track_frame(graph, f);
    } catch (const TrackingFailure& e) {
      ++result.tracking_failures;
      say(std::string("dropped frame: ") + e.what());
      continue;
    }
    tracker.record(f, tr.pose);
    if (!maybe_promote_keyframe(tr.mean_flow, cfg.graph.flow_threshold)) {
      placed[f] = {graph.last().id, graph.last().pose.inverse() * tr.pose, false};
      continue;
    }
    Keyframe kf;
    try {
      kf = make_keyframe(f, tr.pose, propagate_depth(graph.last(), tr.pose, grid));
    } catch (const OracleUnavailableError& e) {
      placed[f] = {graph.last().id, graph.last().pose.inverse() * tr.pose, false};
      say(std::string("no depth prior, frame kept as non-keyframe: ") + e.what());
      continue;
    }
    const int id = graph.add_keyframe(std::move(kf));
    graph.build_keyframe_edges(id);
    const std::vector<int> window = last_n(graph.size(), cfg.ba_window);
    std::vector<int> free_pose;
    for (int k : window) {
      if (k != 0) free_pose.push_back(k);
    }
    refresh_flows(graph, *flow_oracle, grid, window);
    const AlternationTrace at = alternate_dba_dso(graph, grid, free_pose, window, cfg.alternation);
    for (int k : window) fill_unobserved(graph.keyframe_state(k));
    graph.age_edges();
    graph.prune_edges();
    tracker.sync(graph);
    placed[f] = {id, SE3Pose::identity(), true};
    char buf[128];
    std::snprintf(buf, sizeof buf, "frame %d -> kf %d (flow %.2f px, dba %.3g, dso %.3g)", f, id, tr.mean_flow,
                  at.dba_objectives.empty() ? 0.0 : at.dba_objectives.back(),
                  at.dso_objectives.empty() ? 0.0 : at.dso_objectives.back());
    say(buf);
    map_keyframe(id);
  }

  if (cfg.final_ba_steps > 0 && graph.size() > 1) {
    std::vector<int> all = last_n(graph.size(), graph.size());
    refresh_flows(graph, *flow_oracle, grid, all);
    GraphProblem gp = build_graph_problem(graph, grid, {all.begin() + 1, all.end()}, all);
    run_dba(gp.problem, gp.state, cfg.final_ba_steps, 1e-12, cfg.alternation.lm);
    write_back(graph, gp);
    say("final DBA done");
  }

  // Non-keyframes were placed against keyframe depth that has since been
  // refined; re-solve each against its temporal keyframe neighbors.
  if (cfg.filler_steps > 0) {
    std::vector<int> kf_frames;
    for (const Keyframe& k : graph.keyframes()) kf_frames.push_back(k.frame_index);
    int refilled = 0;
    for (auto& [frame, ref] : placed) {
      if (ref.keyframe) continue;
      const auto after = std::upper_bound(kf_frames.begin(), kf_frames.end(), frame) - kf_frames.begin();
      std::vector<int> ids;
      for (auto k = std::max<std::ptrdiff_t>(0, after - 2); k < std::min<std::ptrdiff_t>(graph.size(), after + 1); ++k) {
        ids.push_back(static_cast<int>(k));
      }
      const SE3Pose initial = graph.keyframe(ref.ref).pose * ref.rel;
      try {
        const SE3Pose pose = refine_frame_pose(graph, *flow_oracle, grid, frame, ids, initial, cfg.filler_steps,
                                               cfg.tracker.lm);
        ref.rel = graph.keyframe(ref.ref).pose.inverse() * pose;
        ++refilled;
      } catch (const TrackingFailure&) {
        // keep the tracked pose
      }
    }
    say("re-placed " + std::to_string(refilled) + " non-keyframes");
  }

  if (!mkfs.empty() && cfg.final_iterations > 0) {
    for (MappingKeyframe& m : mkfs) m.proxy = build_proxy(graph.keyframe(m.kf_id), intr.width, intr.height).full;
    std::vector<TrainView> views;
    for (const MappingKeyframe& m : mkfs) {
      const Keyframe& k = graph.keyframe(m.kf_id);
      views.push_back({k.pose, &k.image, &m.proxy, k.id});
    }
    const double extent = scene_extent(graph, mkfs);
    MapperOptions fopts = mopts;
    fopts.densify_enabled = false;
    MapOptimizer refiner(intr, fopts);
    const std::vector<double> trace = refiner.optimize(map, views, cfg.final_iterations, extent, graph.last().id);
    char buf[96];
    std::snprintf(buf, sizeof buf, "final refinement: %zu gaussians, loss %.4f", map.size(), trace.back());
    say(buf);
  }

  for (const auto& [frame, ref] : placed) {
    result.trajectory.push_back({seq.frames[frame].timestamp, graph.keyframe(ref.ref).pose * ref.rel});
  }
  result.keyframes = graph.size();
  result.mapping_keyframes = static_cast<int>(mkfs.size());

  std::filesystem::create_directories(out_dir);
  write_tum_trajectory(result.trajectory, out_dir / "trajectory.txt");
  ply_write(map, out_dir / "map.ply");

  if (seq.has_groundtruth()) {
    try {
      result.ate_rmse = ate_rmse(result.trajectory, seq.groundtruth());
    } catch (const InsufficientOverlapError& e) {
      say(std::string("ATE unavailable: ") + e.what());
    }
  }

  std::set<int> training;
  for (const MappingKeyframe& m : mkfs) training.insert(graph.keyframe(m.kf_id).frame_index);
  if (cfg.eval_every > 0) {
    if (cfg.write_renders) std::filesystem::create_directories(out_dir / "renders");
    double psum = 0, ssum = 0;
    for (const auto& [frame, ref] : placed) {
      if (frame % cfg.eval_every != 0 || training.count(frame)) continue;
      const SE3Pose pose = graph.keyframe(ref.ref).pose * ref.rel;
      const RenderOutput out = render(map, pose, intr);
      psum += psnr(out.intensity, images[frame]);
      ssum += ssim(out.intensity, images[frame]);
      ++result.eval_views;
      if (cfg.write_renders) png_write_gray8(out.intensity, out_dir / "renders" / png_name(frame));
    }
    if (result.eval_views > 0) {
      result.psnr = psum / result.eval_views;
      result.ssim = ssum / result.eval_views;
    }
  }

  std::ofstream metrics(out_dir / "metrics.txt");
  if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.txt").string());
  metrics << format_metrics(result, seq.name);
  say("done");
  return result;
}

std::string format_metrics(const PipelineResult& r, const std::string& sequence) {
  std::string out;
  auto line = [&](const char* metric, const std::string& value) {
    out += std::string(metric) + "\t" + sequence + "\t" + value + "\n";
  };
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  line("ate_rmse", r.ate_rmse ? num(*r.ate_rmse) : "unavailable");
  line("psnr", r.psnr ? num(*r.psnr) : "unavailable");
  line("ssim", r.ssim ? num(*r.ssim) : "unavailable");
  line("lpips", "unavailable");
  line("eval_views", std::to_string(r.eval_views));
  line("keyframes", std::to_string(r.keyframes));
  line("mapping_keyframes", std::to_string(r.mapping_keyframes));
  line("gaussians", std::to_string(r.map.size()));
  line("tracking_failures", std::to_string(r.tracking_failures));
  return out;
}

}  // namespace thermap
