#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thermap/dataset_io.hpp"
#include "thermap/geometry.hpp"

namespace thermap {

/// Axis-aligned slab: surface where coordinate `axis` equals `offset`.
struct ScenePlane {
  int axis = 0;
  double offset = 0;
  double base = 0.5;  // mean intensity
};

struct SceneSphere {
  Vec3 center = Vec3::Zero();
  double radius = 1;
  double base = 0.5;
};

struct SceneBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  double base = 0.5;
};

/// Closed room with objects inside. World y points down; the floor is the
/// plane y = floor_y.
struct SyntheticScene {
  std::vector<ScenePlane> planes;
  std::vector<SceneSphere> spheres;
  std::vector<SceneBox> boxes;
  std::uint64_t seed = 0;
  double texture_frequency = 1.2;  // cycles per world unit
  double texture_amplitude = 0.18;

  static SyntheticScene make(std::uint64_t seed);

  struct Hit {
    double t = 0;
    Vec3 point = Vec3::Zero();
    double intensity = 0;
  };
  /// Nearest surface along origin + t * dir, t > 1e-9.
  std::optional<Hit> intersect(const Vec3& origin, const Vec3& dir) const;
  /// Smooth value noise in [-1, 1].
  double noise(const Vec3& p) const;
};

enum class TrajectoryKind { kOrbit, kLine, kFigure8 };
TrajectoryKind parse_trajectory_kind(const std::string& name);

struct SynthConfig {
  int frames = 60;
  int width = 320;
  int height = 256;
  double focal = 300;
  TrajectoryKind trajectory = TrajectoryKind::kOrbit;
  int bit_depth = 14;
  std::uint64_t seed = 0;
  double radius = 3.0;       // orbit radius, world units
  double arc_degrees = 360;  // orbit sweep
  double fps = 10;
  int supersample = 2;       // intensity rays per pixel per axis
  bool oracle_sidecars = true;
};

PinholeIntrinsics synth_intrinsics(const SynthConfig& cfg);

/// World-from-camera poses of the configured trajectory.
std::vector<SE3Pose> synth_trajectory(const SynthConfig& cfg);

/// World-from-camera pose at `eye` looking at `target`, image y along +y world.
SE3Pose look_at(const Vec3& eye, const Vec3& target);

struct SynthFrame {
  GrayImage intensity;   // [0, 1]
  Grid<double> depth;    // camera z, full resolution
};

SynthFrame render_synthetic(const SyntheticScene& scene, const SE3Pose& pose,
                            const PinholeIntrinsics& intr, int supersample);

/// Writes calib.txt, frames.txt, images/, groundtruth.txt, gt/depth_<k>.pfm
/// and, if enabled, oracle/ with exact mono depth and consecutive-frame flow.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace thermap
