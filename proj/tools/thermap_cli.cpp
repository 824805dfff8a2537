// thermap command line: synthetic data, enhancement, the full pipeline and
// the evaluation helpers. Exit codes: 0 ok, 1 unexpected, 2 tracking failure,
// 3 config error, 4 I/O or parse error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "thermap/config.hpp"
#include "thermap/dataset_io.hpp"
#include "thermap/errors.hpp"
#include "thermap/gs_raster.hpp"
#include "thermap/metrics.hpp"
#include "thermap/pipeline.hpp"
#include "thermap/synthetic.hpp"

namespace fs = std::filesystem;
using namespace thermap;

namespace {

constexpr int kExitTracking = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string frame_png(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", k);
  return buf;
}

// Pose of `t` from the trajectory, if the trajectory has a sample within 0.02 s.
const TimedPose* nearest(const Trajectory& traj, double t) {
  const TimedPose* best = nullptr;
  for (const TimedPose& p : traj) {
    if (std::abs(p.timestamp - t) <= 0.02 && (!best || std::abs(p.timestamp - t) < std::abs(best->timestamp - t))) {
      best = &p;
    }
  }
  return best;
}

GaussianMap load_map(const fs::path& path) {
  GaussianMap map;
  map.add(ply_read(path));
  return map;
}

struct RunArgs {
  std::string dataset, out, config, oracle, oracle_dir, enhance;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool deterministic = false;
  bool dry_config = false;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg.load(a.config);
  for (const std::string& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.oracle.empty()) cfg.set("oracle", a.oracle);
  if (!a.oracle_dir.empty()) cfg.set("oracle_dir", a.oracle_dir);
  if (!a.enhance.empty()) cfg.set("enhance", a.enhance);
  if (a.seed_given) cfg.seed = a.seed;
  if (a.deterministic) cfg.deterministic = true;
  if (a.dry_config) {
    std::cout << cfg.dump();
    return 0;
  }
  if (a.dataset.empty() || a.out.empty()) throw ConfigError("run needs --dataset and --out");
  const SequenceManifest seq = load_sequence(a.dataset);
  const PipelineResult r = run_pipeline(seq, cfg, a.out, a.quiet ? nullptr : &std::cerr);
  std::cout << format_metrics(r, seq.name);
  if (r.tracking_failures > cfg.max_tracking_failures) {
    std::cerr << "tracking failed on " << r.tracking_failures << " frame(s)\n";
    return kExitTracking;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermal SLAM with Gaussian splatting maps"};
  app.require_subcommand(1);

  // synth
  SynthConfig synth;
  std::string synth_out, synth_traj = "orbit";
  auto* s = app.add_subcommand("synth", "generate a synthetic thermal sequence with ground truth");
  s->add_option("--out", synth_out, "output directory")->required();
  s->add_option("--frames", synth.frames)->check(CLI::PositiveNumber);
  s->add_option("--width", synth.width)->check(CLI::PositiveNumber);
  s->add_option("--height", synth.height)->check(CLI::PositiveNumber);
  s->add_option("--focal", synth.focal)->check(CLI::PositiveNumber);
  s->add_option("--trajectory", synth_traj, "orbit, line or figure8");
  s->add_option("--bit-depth", synth.bit_depth)->check(CLI::IsMember({8, 14, 16}));
  s->add_option("--seed", synth.seed);
  s->add_option("--radius", synth.radius)->check(CLI::PositiveNumber);
  s->add_option("--arc", synth.arc_degrees);
  s->add_option("--fps", synth.fps)->check(CLI::PositiveNumber);
  s->add_option("--supersample", synth.supersample)->check(CLI::PositiveNumber);
  bool no_sidecars = false;
  s->add_flag("--no-oracle", no_sidecars, "skip oracle/ sidecar files");

  // enhance
  std::string enh_dataset, enh_out, enh_method = "fieldscale";
  auto* e = app.add_subcommand("enhance", "write enhanced 8-bit frames of a sequence");
  e->add_option("--dataset", enh_dataset)->required();
  e->add_option("--out", enh_out)->required();
  e->add_option("--enhance", enh_method, "fieldscale, naive or none");

  // run
  RunArgs ra;
  auto* r = app.add_subcommand("run", "full pipeline on a sequence");
  r->add_option("--dataset", ra.dataset);
  r->add_option("--out", ra.out);
  r->add_option("--config", ra.config, "key=value file");
  r->add_option("--set", ra.sets, "override a config key (key=value)");
  r->add_option("--seed", ra.seed)->each([&](const std::string&) { ra.seed_given = true; });
  r->add_flag("--deterministic", ra.deterministic);
  r->add_option("--oracle", ra.oracle, "synthetic or file");
  r->add_option("--oracle-dir", ra.oracle_dir);
  r->add_option("--enhance", ra.enhance, "fieldscale, naive or none");
  r->add_flag("--dry-config", ra.dry_config, "print the resolved configuration and exit");
  r->add_flag("--quiet", ra.quiet);

  // render
  std::string rd_map, rd_traj, rd_dataset, rd_out;
  auto* rd = app.add_subcommand("render", "render a map at the poses of a trajectory");
  rd->add_option("--map", rd_map)->required();
  rd->add_option("--trajectory", rd_traj)->required();
  rd->add_option("--dataset", rd_dataset, "sequence providing calib.txt and timestamps")->required();
  rd->add_option("--out", rd_out)->required();

  // eval-ate
  std::string ate_est, ate_gt, ate_name = "seq";
  auto* ea = app.add_subcommand("eval-ate", "Sim(3)-aligned ATE RMSE of two TUM trajectories");
  ea->add_option("estimate", ate_est)->required();
  ea->add_option("groundtruth", ate_gt)->required();
  ea->add_option("--name", ate_name);

  // eval-render
  std::string er_dataset, er_map, er_traj, er_method = "fieldscale";
  int er_every = 5;
  auto* er = app.add_subcommand("eval-render", "PSNR / SSIM of map renders against enhanced frames");
  er->add_option("--dataset", er_dataset)->required();
  er->add_option("--map", er_map)->required();
  er->add_option("--trajectory", er_traj)->required();
  er->add_option("--every", er_every)->check(CLI::PositiveNumber);
  er->add_option("--enhance", er_method);

  // export-ply
  std::string ep_in, ep_out;
  double ep_min_opacity = 0;
  auto* ep = app.add_subcommand("export-ply", "copy a map, dropping low-opacity Gaussians");
  ep->add_option("input", ep_in)->required();
  ep->add_option("output", ep_out)->required();
  ep->add_option("--min-opacity", ep_min_opacity)->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitConfig;
  }

  try {
    if (*s) {
      synth.trajectory = parse_trajectory_kind(synth_traj);
      synth.oracle_sidecars = !no_sidecars;
      generate_synthetic(synth, synth_out);
      return 0;
    }
    if (*e) {
      const EnhanceMethod m = parse_enhance_method(enh_method);
      const SequenceManifest seq = load_sequence(enh_dataset);
      fs::create_directories(enh_out);
      for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        RawThermalImage raw = png_read_raw(seq.frames[k].image_path);
        raw.bit_depth = seq.bit_depth;
        png_write_gray8(enhance(raw, m), fs::path(enh_out) / frame_png(static_cast<int>(k)));
      }
      return 0;
    }
    if (*r) return cmd_run(ra);
    if (*rd) {
      const SequenceManifest seq = load_sequence(rd_dataset);
      const GaussianMap map = load_map(rd_map);
      const Trajectory traj = read_tum_trajectory(rd_traj);
      fs::create_directories(rd_out);
      for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        const TimedPose* p = nearest(traj, seq.frames[k].timestamp);
        if (!p) continue;
        const RenderOutput out = render(map, p->pose, seq.intrinsics);
        png_write_gray8(out.intensity, fs::path(rd_out) / frame_png(static_cast<int>(k)));
      }
      return 0;
    }
    if (*ea) {
      const double v = ate_rmse(read_tum_trajectory(ate_est), read_tum_trajectory(ate_gt));
      std::cout << "ate_rmse\t" << ate_name << "\t" << fmt(v) << "\n";
      return 0;
    }
    if (*er) {
      const EnhanceMethod m = parse_enhance_method(er_method);
      const SequenceManifest seq = load_sequence(er_dataset);
      const GaussianMap map = load_map(er_map);
      const Trajectory traj = read_tum_trajectory(er_traj);
      double psum = 0, ssum = 0;
      int n = 0;
      for (std::size_t k = 0; k < seq.frames.size(); k += er_every) {
        const TimedPose* p = nearest(traj, seq.frames[k].timestamp);
        if (!p) continue;
        RawThermalImage raw = png_read_raw(seq.frames[k].image_path);
        raw.bit_depth = seq.bit_depth;
        const GrayImage target = enhance(raw, m);
        const RenderOutput out = render(map, p->pose, seq.intrinsics);
        psum += psnr(out.intensity, target);
        ssum += ssim(out.intensity, target);
        ++n;
      }
      if (n == 0) throw InsufficientOverlapError("no frame matches the trajectory");
      std::cout << "psnr\t" << seq.name << "\t" << fmt(psum / n) << "\n";
      std::cout << "ssim\t" << seq.name << "\t" << fmt(ssum / n) << "\n";
      std::cout << "eval_views\t" << seq.name << "\t" << n << "\n";
      return 0;
    }
    if (*ep) {
      std::vector<Gaussian3D> kept;
      for (const Gaussian3D& g : ply_read(ep_in)) {
        if (g.opacity() >= ep_min_opacity) kept.push_back(g);
      }
      ply_write(kept, ep_out);
      std::cerr << kept.size() << " gaussians written\n";
      return 0;
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const IoError& ex) {
    std::cerr << "i/o error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const TrackingFailure& ex) {
    std::cerr << "tracking failure: " << ex.what() << "\n";
    return kExitTracking;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
