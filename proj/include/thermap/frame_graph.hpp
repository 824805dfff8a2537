#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "thermap/dba_solver.hpp"
#include "thermap/geometry.hpp"
#include "thermap/oracles.hpp"
#include "thermap/thermal_enhance.hpp"

namespace thermap {

/// Multi-view consistency class of a depth pixel.
enum class PixelClass : std::uint8_t { kInvalid = 0, kLow = 1, kHigh = 2 };
using PixelClassMask = Grid<PixelClass>;

struct Keyframe {
  int id = 0;
  int frame_index = 0;
  double timestamp = 0;
  SE3Pose pose;  // world-from-camera
  InverseDepthMap inv_depth;
  GrayImage image;
  MonoDepthMap mono;
  double theta = 1.0;
  double gamma = 0.0;
  bool affine_initialized = false;
  PixelClassMask classes;
};

struct Edge {
  int i = 0;
  int j = 0;
  int age = 0;
  std::optional<FlowPrediction> flow;
};

struct GraphOptions {
  double flow_threshold = 2.4;  // tau, depth-grid pixels
  int max_edge_age = 24;
  int edge_radius = 3;
};

/// Keyframe co-visibility graph. Keyframe ids are dense and increasing;
/// keyframe 0 is the gauge anchor and its pose is never modified.
class CovisibilityGraph {
 public:
  explicit CovisibilityGraph(GraphOptions options = {}) : options_(options) {}

  const GraphOptions& options() const { return options_; }
  int size() const { return static_cast<int>(keyframes_.size()); }
  bool empty() const { return keyframes_.empty(); }

  /// Appends a keyframe and returns its id. The first keyframe is placed at
  /// the identity regardless of the supplied pose.
  int add_keyframe(Keyframe kf);

  const Keyframe& keyframe(int id) const { return keyframes_.at(id); }
  /// Mutable access for depth / affine state. Poses go through set_pose.
  Keyframe& keyframe_state(int id) { return keyframes_.at(id); }
  const std::deque<Keyframe>& keyframes() const { return keyframes_; }
  const Keyframe& last() const { return keyframes_.back(); }

  /// Throws ContractViolation when asked to move keyframe 0.
  void set_pose(int id, const SE3Pose& pose);

  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<Edge>& edges() { return edges_; }
  bool has_edge(int i, int j) const;
  std::vector<int> neighbors(int id) const;
  int degree(int id) const;

  /// Bidirectional edges to keyframes within the temporal radius.
  int build_keyframe_edges(int new_kf_id);
  void age_edges();
  /// Removes edges older than max_edge_age, keeping each vertex's newest edge.
  int prune_edges();

 private:
  GraphOptions options_;
  std::deque<Keyframe> keyframes_;
  std::vector<Edge> edges_;
};

/// Strict keyframe rule: mean flow must exceed tau.
bool maybe_promote_keyframe(double mean_flow, double tau);

/// Inverse depth of `new_pose` obtained by splatting the source keyframe's
/// depth (nearest cell, closest point wins). Holes take the median of the
/// filled cells.
InverseDepthMap propagate_depth(const Keyframe& source, const SE3Pose& new_pose,
                                const PinholeIntrinsics& grid);

/// Mean correspondence magnitude |p_ij - p_i| of keyframe pixels landing
/// inside frame j.
double mean_flow(const Keyframe& kf, const SE3Pose& pose_j, const PinholeIntrinsics& grid);

/// A BA problem over a subset of the graph. Nodes map to keyframe ids; an
/// optional extra node carries a tracked non-keyframe pose without depth.
struct GraphProblem {
  BAProblem problem;
  BAState state;
  std::vector<int> node_kf;  // -1 for the tracked frame
};

/// Builds the problem for edges touching `free_pose_kfs` or `free_depth_kfs`.
/// Every edge must carry a flow prediction.
GraphProblem build_graph_problem(const CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                                 const std::vector<int>& free_pose_kfs,
                                 const std::vector<int>& free_depth_kfs);
/// Writes poses and depths of free nodes back into the graph.
void write_back(CovisibilityGraph& graph, const GraphProblem& gp);

/// Predicts flow for every edge touching `kfs` at the current state. Edges
/// the oracle cannot serve are removed; returns how many.
int refresh_flows(CovisibilityGraph& graph, const FlowOracle& oracle, const PinholeIntrinsics& grid,
                   const std::vector<int>& kfs);

struct TrackerOptions {
  int connect_keyframes = 3;
  int micro_steps = 2;
  LMOptions lm;
};

struct TrackResult {
  SE3Pose initial_pose;
  SE3Pose pose;
  double mean_flow = 0;
  std::vector<int> connected;  // keyframe ids used as temporary edges
};

/// Per-frame tracking against the most recent keyframes (keyframe state frozen).
class Tracker {
 public:
  Tracker(const FlowOracle& oracle, PinholeIntrinsics grid, TrackerOptions options = {});

  /// Constant-velocity initialization from the two previous frames, temporary
  /// edges to the temporally nearest keyframes, then pose-only DBA steps.
  /// Throws TrackingFailure when the oracle cannot serve an edge.
  TrackResult track_frame(const CovisibilityGraph& graph, int frame_index, int micro_steps = -1);

  /// Records the pose of a processed frame for the motion model.
  void record(int frame_index, const SE3Pose& pose);
  /// Refreshes recorded poses of frames that are keyframes.
  void sync(const CovisibilityGraph& graph);
  SE3Pose predict() const;

 private:
  const FlowOracle& oracle_;
  PinholeIntrinsics grid_;
  TrackerOptions options_;
  std::deque<std::pair<int, SE3Pose>> history_;
};

/// Refines a frame pose against the given keyframes with everything else frozen.
SE3Pose refine_frame_pose(const CovisibilityGraph& graph, const FlowOracle& oracle,
                          const PinholeIntrinsics& grid, int frame_index,
                          const std::vector<int>& kf_ids, const SE3Pose& initial, int steps,
                          const LMOptions& lm = {});

}  // namespace thermap
