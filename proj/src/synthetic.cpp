#include "thermap/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>

#include "thermap/errors.hpp"
#include "thermap/oracles.hpp"

namespace thermap {

namespace {

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double lattice(std::uint64_t seed, std::int64_t x, std::int64_t y, std::int64_t z) {
  const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(x) * 73856093ull ^
                                             static_cast<std::uint64_t>(y) * 19349663ull,
                                   static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

}  // namespace

double SyntheticScene::noise(const Vec3& p) const {
  const Vec3 q = p * texture_frequency;
  const double fx = std::floor(q.x()), fy = std::floor(q.y()), fz = std::floor(q.z());
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
             iz = static_cast<std::int64_t>(fz);
  const double u = fade(q.x() - fx), v = fade(q.y() - fy), w = fade(q.z() - fz);
  double acc = 0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
    acc += wt * lattice(seed, ix + dx, iy + dy, iz + dz);
  }
  return acc;
}

SyntheticScene SyntheticScene::make(std::uint64_t seed) {
  SyntheticScene s;
  s.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0x5c3e));
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  // Room: walls at +-6 in x and z, floor y = 1, ceiling y = -4.
  s.planes = {{0, -6.0, 0.35}, {0, 6.0, 0.45}, {2, -6.0, 0.40}, {2, 6.0, 0.30}, {1, 1.0, 0.25}, {1, -4.0, 0.55}};
  s.spheres = {{Vec3(0.0 + jitter(rng), 0.4, 0.0 + jitter(rng)), 0.6, 0.80},
               {Vec3(0.95 + jitter(rng), 0.65, -0.6 + jitter(rng)), 0.35, 0.65}};
  s.boxes = {{Vec3(-1.3, 0.2, 0.3), Vec3(-0.6, 1.0, 1.0), 0.70},
             {Vec3(0.5, -0.3, 0.6), Vec3(1.1, 1.0, 1.1), 0.55},
             {Vec3(-1.0, 0.5, -1.3), Vec3(-0.3, 1.0, -0.7), 0.60}};
  for (SceneBox& b : s.boxes) {
    const double dx = jitter(rng), dz = jitter(rng);
    b.lo += Vec3(dx, 0, dz);
    b.hi += Vec3(dx, 0, dz);
  }
  return s;
}

std::optional<SyntheticScene::Hit> SyntheticScene::intersect(const Vec3& origin, const Vec3& dir) const {
  constexpr double kEps = 1e-9;
  double best = std::numeric_limits<double>::infinity();
  double base = 0;
  for (const ScenePlane& p : planes) {
    if (std::abs(dir(p.axis)) < 1e-15) continue;
    const double t = (p.offset - origin(p.axis)) / dir(p.axis);
    if (t > kEps && t < best) {
      best = t;
      base = p.base;
    }
  }
  for (const SceneSphere& s : spheres) {
    const Vec3 oc = origin - s.center;
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double a = dir.squaredNorm();
    const double disc = b * b - a * c;
    if (disc < 0) continue;
    const double sq = std::sqrt(disc);
    for (double t : {(-b - sq) / a, (-b + sq) / a}) {
      if (t > kEps) {
        if (t < best) {
          best = t;
          base = s.base;
        }
        break;
      }
    }
  }
  for (const SceneBox& bx : boxes) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(dir(a)) < 1e-15) {
        if (origin(a) < bx.lo(a) || origin(a) > bx.hi(a)) miss = true;
        continue;
      }
      double ta = (bx.lo(a) - origin(a)) / dir(a);
      double tb = (bx.hi(a) - origin(a)) / dir(a);
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    }
    if (miss) continue;
    const double t = t0 > kEps ? t0 : t1;
    if (t > kEps && t < best) {
      best = t;
      base = bx.base;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  Hit h;
  h.t = best;
  h.point = origin + best * dir;
  const Vec3& p = h.point;
  // Warm stripes on large surfaces give a few sharp edges.
  const double stripe = std::fmod(std::abs(p.x() + 0.7 * p.z() - 0.4 * p.y()) + 100.0, 2.5) < 0.35 ? 0.08 : 0.0;
  h.intensity = std::clamp(base + texture_amplitude * noise(p) + stripe, 0.02, 0.98);
  return h;
}

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "line") return TrajectoryKind::kLine;
  if (name == "figure-8" || name == "figure8") return TrajectoryKind::kFigure8;
  throw ConfigError("unknown trajectory '" + name + "' (orbit, line, figure-8)");
}

PinholeIntrinsics synth_intrinsics(const SynthConfig& cfg) {
  PinholeIntrinsics k{cfg.focal, cfg.focal, (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0, cfg.width, cfg.height};
  k.validate();
  return k;
}

SE3Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = Vec3::UnitY().cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return SE3Pose(r, eye);
}

std::vector<SE3Pose> synth_trajectory(const SynthConfig& cfg) {
  if (cfg.frames < 2) throw ConfigError("synthetic sequence needs at least 2 frames");
  std::vector<SE3Pose> out;
  const Vec3 target(0, 0.5, 0);
  const double r = cfg.radius;
  for (int k = 0; k < cfg.frames; ++k) {
    const double s = static_cast<double>(k) / (cfg.frames - 1);
    Vec3 eye;
    switch (cfg.trajectory) {
      case TrajectoryKind::kOrbit: {
        const double a = s * cfg.arc_degrees * std::numbers::pi / 180.0;
        eye = Vec3(r * std::sin(a), -0.4, -r * std::cos(a));
        break;
      }
      case TrajectoryKind::kLine:
        eye = Vec3(-0.5 * r + s * r, -0.4, -r);
        break;
      case TrajectoryKind::kFigure8: {
        const double a = s * 2 * std::numbers::pi;
        eye = Vec3(0.5 * r * std::sin(a), -0.4 + 0.1 * std::sin(2 * a), -r + 0.25 * r * std::sin(2 * a));
        break;
      }
    }
    out.push_back(look_at(eye, target));
  }
  return out;
}

SynthFrame render_synthetic(const SyntheticScene& scene, const SE3Pose& pose,
                            const PinholeIntrinsics& intr, int supersample) {
  if (supersample < 1) throw ContractViolation("render_synthetic: supersample must be >= 1");
  SynthFrame f{GrayImage(intr.width, intr.height), Grid<double>(intr.width, intr.height)};
  const Mat3 r = pose.rotation_matrix();
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Vec3 ray((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const auto hit = scene.intersect(pose.translation, r * ray);
      if (!hit) throw ContractViolation("render_synthetic: ray escaped the room");
      f.depth(x, y) = hit->t;  // ray has unit z in the camera frame
      double acc = 0;
      for (int sy = 0; sy < supersample; ++sy) {
        for (int sx = 0; sx < supersample; ++sx) {
          const double ox = (sx + 0.5) / supersample - 0.5;
          const double oy = (sy + 0.5) / supersample - 0.5;
          const Vec3 sub((x + ox - intr.cx) / intr.fx, (y + oy - intr.cy) / intr.fy, 1.0);
          const auto h = scene.intersect(pose.translation, r * sub);
          acc += h ? h->intensity : 0.0;
        }
      }
      f.intensity(x, y) = acc / (supersample * supersample);
    }
  }
  return f;
}

void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.bit_depth != 8 && cfg.bit_depth != 14 && cfg.bit_depth != 16) {
    throw ConfigError("synthetic bit depth must be 8, 14 or 16");
  }
  namespace fs = std::filesystem;
  const PinholeIntrinsics intr = synth_intrinsics(cfg);
  const SyntheticScene scene = SyntheticScene::make(cfg.seed);
  const std::vector<SE3Pose> poses = synth_trajectory(cfg);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "gt");

  {
    std::ofstream calib(dir / "calib.txt");
    if (!calib) throw IoError("cannot write " + (dir / "calib.txt").string());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g %d %d %d\n", intr.fx, intr.fy, intr.cx, intr.cy,
                  intr.width, intr.height, cfg.bit_depth);
    calib << buf;
  }
  std::ofstream frames(dir / "frames.txt");
  if (!frames) throw IoError("cannot write " + (dir / "frames.txt").string());

  auto gt = std::make_shared<GroundTruth>();
  gt->intrinsics = intr;
  Trajectory traj;
  const double max_count = std::ldexp(1.0, cfg.bit_depth) - 1;
  for (int k = 0; k < cfg.frames; ++k) {
    const SynthFrame f = render_synthetic(scene, poses[k], intr, cfg.supersample);
    Grid<std::uint16_t> raw(intr.width, intr.height);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<std::uint16_t>(std::lround(f.intensity[i] * max_count));
    }
    char name[64];
    std::snprintf(name, sizeof name, "images/%06d.png", k);
    if (cfg.bit_depth == 8) {
      png_write_raw8(raw, dir / name);
    } else {
      png_write_raw16(raw, dir / name);
    }
    const double t = k / cfg.fps;
    char line[96];
    std::snprintf(line, sizeof line, "%.9f %s\n", t, name);
    frames << line;
    pfm_write(to_pfm(f.depth), dir / "gt" / ("depth_" + std::to_string(k) + ".pfm"));
    traj.push_back({t, poses[k]});
    gt->poses[k] = poses[k];
    gt->depths[k] = f.depth;
  }
  write_tum_trajectory(traj, dir / "groundtruth.txt");

  if (cfg.oracle_sidecars) {
    fs::create_directories(dir / "oracle");
    const SyntheticFlowOracle flow(gt, {});
    const PinholeIntrinsics g = gt->grid_intrinsics();
    Grid<Vec2> identity(g.width, g.height);
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) identity(x, y) = Vec2(x, y);
    }
    for (int k = 0; k < cfg.frames; ++k) {
      const InverseDepthMap inv = gt->grid_inverse_depth(k);
      Grid<double> depth(g.width, g.height);
      for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = 1.0 / inv.values[i];
      pfm_write(to_pfm(depth), dir / "oracle" / ("depth_" + std::to_string(k) + ".pfm"));
      if (k + 1 >= cfg.frames) continue;
      for (const auto& [i, j] : {std::pair{k, k + 1}, std::pair{k + 1, k}}) {
        const FlowPrediction p = flow.predict_flow(i, j, identity);
        PfmImage fl{g.width, g.height, 3, std::vector<float>(std::size_t(g.width) * g.height * 3, 0.f)};
        PfmImage cf = fl;
        for (int y = 0; y < g.height; ++y) {
          for (int x = 0; x < g.width; ++x) {
            fl.at(x, y, 0) = static_cast<float>(p.r(x, y).x());
            fl.at(x, y, 1) = static_cast<float>(p.r(x, y).y());
            cf.at(x, y, 0) = static_cast<float>(p.w(x, y).x());
            cf.at(x, y, 1) = static_cast<float>(p.w(x, y).y());
          }
        }
        const std::string tag = std::to_string(i) + "_" + std::to_string(j);
        pfm_write(fl, dir / "oracle" / ("flow_" + tag + ".pfm"));
        pfm_write(cf, dir / "oracle" / ("conf_" + tag + ".pfm"));
      }
    }
  }
}

}  // namespace thermap
