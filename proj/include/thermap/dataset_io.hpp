#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thermap/geometry.hpp"
#include "thermap/grid.hpp"
#include "thermap/gs_map.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

namespace fs = std::filesystem;

struct TimedPose {
  double timestamp = 0;
  SE3Pose pose;  // world-from-camera
};

/// Poses ordered by strictly increasing timestamp.
using Trajectory = std::vector<TimedPose>;

void validate_trajectory(const Trajectory& traj);

/// TUM format: `timestamp tx ty tz qx qy qz qw`.
void write_tum_trajectory(const Trajectory& traj, const fs::path& path);
Trajectory read_tum_trajectory(const fs::path& path);
std::string format_tum_line(const TimedPose& p);

/// Portable Float Map. Data are kept top row first in memory.
struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 ("Pf") or 3 ("PF")
  std::vector<float> data;

  float& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
};

/// Little-endian only (negative scale). Big-endian files are rejected.
PfmImage pfm_read(const fs::path& path);
void pfm_write(const PfmImage& image, const fs::path& path);
PfmImage to_pfm(const Grid<double>& g);
Grid<double> from_pfm(const PfmImage& p, int channel = 0);

/// 8- or 16-bit grayscale PNG.
RawThermalImage png_read_raw(const fs::path& path);
void png_write_gray8(const GrayImage& image, const fs::path& path);
void png_write_raw16(const Grid<std::uint16_t>& values, const fs::path& path);
void png_write_raw8(const Grid<std::uint16_t>& values, const fs::path& path);

struct FrameRecord {
  double timestamp = 0;
  fs::path image_path;  // absolute
  std::optional<SE3Pose> gt_pose;
  std::optional<fs::path> gt_depth_path;
};

struct SequenceManifest {
  fs::path root;
  std::string name;
  PinholeIntrinsics intrinsics;
  int bit_depth = 16;
  std::vector<FrameRecord> frames;
  bool has_groundtruth() const;
  Trajectory groundtruth() const;
};

/// Loads `calib.txt` (fx fy cx cy width height bit_depth), `frames.txt`
/// (timestamp relative-path per line) and optional `groundtruth.txt`.
/// GT depth maps are picked up from `gt/depth_<index>.pfm` when present.
SequenceManifest load_sequence(const fs::path& dir);

/// Binary little-endian PLY, float32 x y z scale_0..2 (log) rot_0..3 (w x y z)
/// opacity (logit) gray.
void ply_write(const std::vector<Gaussian3D>& gaussians, const fs::path& path);
void ply_write(const GaussianMap& map, const fs::path& path);
std::vector<Gaussian3D> ply_read(const fs::path& path);

}  // namespace thermap
