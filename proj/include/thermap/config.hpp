#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "thermap/dso_refine.hpp"
#include "thermap/frame_graph.hpp"
#include "thermap/gs_map.hpp"
#include "thermap/map_optimizer.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

enum class OracleMode { kSynthetic, kFile };

/// Every tunable of a run. Keys are documented by `describe_config`.
struct RunConfig {
  // odometry
  GraphOptions graph;
  TrackerOptions tracker;
  AlternationOptions alternation;
  int ba_window = 5;       // keyframes with free pose/depth after each insertion
  int final_ba_steps = 0;  // global DBA steps after the last frame
  int max_tracking_failures = 0;
  int filler_steps = 4;    // pose-only steps re-placing non-keyframes after the last frame

  // oracles
  OracleMode oracle = OracleMode::kSynthetic;
  std::string oracle_dir;
  double flow_sigma = 0;
  double mono_theta = 2.0;
  double mono_gamma = 0.05;
  double mono_sigma = 0;

  // enhancement
  EnhanceMethod enhance = EnhanceMethod::kFieldScale;
  FieldScaleOptions fieldscale;

  // mapping
  MapperOptions mapper;
  int spawn_stride = 4;
  int map_iterations_per_kf = 60;
  int map_window = 8;
  int final_iterations = 600;
  double window_overlap = 0.95;

  // evaluation
  int eval_every = 5;
  bool write_renders = true;

  std::uint64_t seed = 0;
  bool deterministic = false;

  /// Applies `key=value`; throws ConfigError naming unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Reads a key=value file (# comments, blank lines allowed).
  void load(const std::filesystem::path& path);
  /// Fully resolved configuration, one `key = value` per line.
  std::string dump() const;
};

struct ConfigKey {
  const char* name;
  const char* help;
};

const std::vector<ConfigKey>& describe_config();

}  // namespace thermap
