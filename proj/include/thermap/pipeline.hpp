#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "thermap/config.hpp"
#include "thermap/dataset_io.hpp"
#include "thermap/gs_map.hpp"

namespace thermap {

struct PipelineResult {
  Trajectory trajectory;
  GaussianMap map;
  int keyframes = 0;
  int mapping_keyframes = 0;
  int tracking_failures = 0;
  std::optional<double> ate_rmse;
  std::optional<double> psnr;  // mean over held-out views
  std::optional<double> ssim;
  int eval_views = 0;
};

/// enhance -> track -> keyframe promotion -> DBA/DSO -> proxy depth -> mapping
/// -> final refinement -> evaluation. Writes trajectory.txt, map.ply,
/// metrics.txt and renders/ into `out_dir`. Progress goes to `log` if given.
PipelineResult run_pipeline(const SequenceManifest& seq, const RunConfig& cfg,
                            const std::filesystem::path& out_dir, std::ostream* log = nullptr);

/// `metric<TAB>sequence<TAB>value` lines.
std::string format_metrics(const PipelineResult& r, const std::string& sequence);

/// Loads ground truth poses and full-resolution depth of a sequence.
GroundTruth load_groundtruth(const SequenceManifest& seq);

}  // namespace thermap
