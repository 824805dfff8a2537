#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "thermap/gs_map.hpp"
#include "thermap/gs_raster.hpp"

namespace thermap {

struct LearningRates {
  double position = 1.6e-4;  // times the scene extent
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
};

struct MapperOptions {
  LossWeights loss;
  LearningRates lr;
  DensifyConfig densify;  // thresholds given as fractions of the scene extent
  bool densify_enabled = true;
  std::uint64_t seed = 0;
};

struct TrainView {
  SE3Pose pose;  // world-from-camera
  const GrayImage* image = nullptr;
  const Grid<double>* proxy_inv_depth = nullptr;  // full resolution
  int kf_id = 0;
};

/// Adam on Gaussian parameters with poses frozen; views are visited round-robin.
class MapOptimizer {
 public:
  MapOptimizer(PinholeIntrinsics intr, MapperOptions options);

  /// Runs `iterations` steps and returns the per-iteration loss. Densifies and
  /// prunes every `densify.interval` iterations (counted across calls).
  std::vector<double> optimize(GaussianMap& map, std::span<const TrainView> views, int iterations,
                               double extent, int current_kf_id);

  long iterations_done() const { return iteration_; }

 private:
  void adam_update(GaussianMap& map, const GradientBundle& g, double extent);

  PinholeIntrinsics intr_;
  MapperOptions options_;
  long iteration_ = 0;
  std::size_t next_view_ = 0;
};

}  // namespace thermap
