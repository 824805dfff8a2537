#include "thermap/frame_graph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

// Current correspondence field of keyframe pixels in a frame; pixels without a
// defined projection keep their own coordinates.
Grid<Vec2> current_correspondence(const Keyframe& kf, const SE3Pose& pose_j,
                                  const PinholeIntrinsics& grid) {
  const SE3Pose t_ji = pose_j.inverse() * kf.pose;
  Grid<Vec2> out(kf.inv_depth.width(), kf.inv_depth.height());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out(x, y) = Vec2(x, y);
      if (!kf.inv_depth.is_valid(x, y)) continue;
      const double d = std::clamp(kf.inv_depth.values(x, y), kMinInvDepth, kMaxInvDepth);
      const Vec3 pc = t_ji * backproject(Vec2(x, y), d, grid);
      if (pc.z() > 1e-8) out(x, y) = project(pc, grid).pixel;
    }
  }
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 1.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

int CovisibilityGraph::add_keyframe(Keyframe kf) {
  kf.id = size();
  if (kf.id == 0) kf.pose = SE3Pose::identity();
  if (!kf.classes.same_shape(kf.inv_depth.values)) {
    kf.classes = PixelClassMask(kf.inv_depth.width(), kf.inv_depth.height(), PixelClass::kInvalid);
  }
  kf.inv_depth.clamp();
  keyframes_.push_back(std::move(kf));
  return keyframes_.back().id;
}

void CovisibilityGraph::set_pose(int id, const SE3Pose& pose) {
  if (id == 0) throw ContractViolation("keyframe 0 is fixed to remove gauge freedom");
  keyframes_.at(id).pose = pose;
}

bool CovisibilityGraph::has_edge(int i, int j) const {
  return std::any_of(edges_.begin(), edges_.end(), [&](const Edge& e) { return e.i == i && e.j == j; });
}

std::vector<int> CovisibilityGraph::neighbors(int id) const {
  std::vector<int> out;
  for (const Edge& e : edges_) {
    if (e.i == id) out.push_back(e.j);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int CovisibilityGraph::degree(int id) const {
  return static_cast<int>(
      std::count_if(edges_.begin(), edges_.end(), [&](const Edge& e) { return e.i == id || e.j == id; }));
}

int CovisibilityGraph::build_keyframe_edges(int new_kf_id) {
  if (new_kf_id < 0 || new_kf_id >= size()) throw ContractViolation("build_keyframe_edges: unknown keyframe");
  int added = 0;
  const int lo = std::max(0, new_kf_id - options_.edge_radius);
  const int hi = std::min(size() - 1, new_kf_id + options_.edge_radius);
  for (int k = lo; k <= hi; ++k) {
    if (k == new_kf_id) continue;
    for (const auto& [a, b] : {std::pair{new_kf_id, k}, std::pair{k, new_kf_id}}) {
      if (!has_edge(a, b)) {
        edges_.push_back({a, b, 0, std::nullopt});
        ++added;
      }
    }
  }
  return added;
}

void CovisibilityGraph::age_edges() {
  for (Edge& e : edges_) ++e.age;
}

int CovisibilityGraph::prune_edges() {
  // Newest edge per vertex: smallest age, later insertion wins ties.
  std::map<int, std::size_t> newest;
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    for (int v : {edges_[k].i, edges_[k].j}) {
      auto it = newest.find(v);
      if (it == newest.end() || edges_[k].age <= edges_[it->second].age) newest[v] = k;
    }
  }
  std::set<std::size_t> keep;
  for (const auto& [v, k] : newest) keep.insert(k);

  std::vector<Edge> kept;
  int removed = 0;
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    if (edges_[k].age > options_.max_edge_age && !keep.count(k)) {
      ++removed;
    } else {
      kept.push_back(std::move(edges_[k]));
    }
  }
  edges_ = std::move(kept);
  return removed;
}

bool maybe_promote_keyframe(double mean_flow, double tau) {
  if (!(mean_flow >= 0)) throw ContractViolation("maybe_promote_keyframe: negative mean flow");
  return mean_flow > tau;
}

InverseDepthMap propagate_depth(const Keyframe& source, const SE3Pose& new_pose,
                                const PinholeIntrinsics& grid) {
  const int w = source.inv_depth.width();
  const int h = source.inv_depth.height();
  InverseDepthMap out(w, h, 0.0);
  out.valid.fill(0);
  const SE3Pose t_ji = new_pose.inverse() * source.pose;
  std::vector<double> filled;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!source.inv_depth.is_valid(x, y)) continue;
      const Vec3 pc = t_ji * backproject(Vec2(x, y), source.inv_depth.values(x, y), grid);
      if (!(pc.z() > 1.0 / kMaxInvDepth)) continue;
      const Projection p = project(pc, grid);
      const int u = static_cast<int>(std::lround(p.pixel.x()));
      const int v = static_cast<int>(std::lround(p.pixel.y()));
      if (!out.values.contains(u, v)) continue;
      if (!out.valid(u, v) || p.inv_depth > out.values(u, v)) {
        out.values(u, v) = p.inv_depth;
        out.valid(u, v) = 1;
      }
    }
  }
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    if (out.valid[k]) filled.push_back(out.values[k]);
  }
  double fill = median_of(filled);
  if (filled.empty()) {
    std::vector<double> src;
    for (std::size_t k = 0; k < source.inv_depth.values.size(); ++k) {
      if (source.inv_depth.valid[k]) src.push_back(source.inv_depth.values[k]);
    }
    fill = median_of(src);
  }
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    if (!out.valid[k]) {
      out.values[k] = fill;
      out.valid[k] = 1;
    }
  }
  out.clamp();
  return out;
}

double mean_flow(const Keyframe& kf, const SE3Pose& pose_j, const PinholeIntrinsics& grid) {
  const ReprojectionField f = reproject(kf.inv_depth, kf.pose, pose_j, grid);
  double sum = 0;
  int n = 0;
  for (int y = 0; y < f.pixels.height(); ++y) {
    for (int x = 0; x < f.pixels.width(); ++x) {
      if (!f.valid(x, y)) continue;
      sum += (f.pixels(x, y) - Vec2(x, y)).norm();
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

GraphProblem build_graph_problem(const CovisibilityGraph& graph, const PinholeIntrinsics& grid,
                                 const std::vector<int>& free_pose_kfs,
                                 const std::vector<int>& free_depth_kfs) {
  const std::set<int> free_pose(free_pose_kfs.begin(), free_pose_kfs.end());
  const std::set<int> free_depth(free_depth_kfs.begin(), free_depth_kfs.end());

  std::vector<const Edge*> active;
  std::set<int> nodes(free_pose.begin(), free_pose.end());
  nodes.insert(free_depth.begin(), free_depth.end());
  for (const Edge& e : graph.edges()) {
    if (free_pose.count(e.i) || free_pose.count(e.j) || free_depth.count(e.i)) {
      if (!e.flow) throw ContractViolation("build_graph_problem: edge without flow prediction");
      active.push_back(&e);
      nodes.insert(e.i);
      nodes.insert(e.j);
    }
  }

  GraphProblem gp;
  gp.problem.intrinsics = grid;
  std::map<int, int> node_of;
  for (int kf : nodes) {
    node_of[kf] = static_cast<int>(gp.node_kf.size());
    gp.node_kf.push_back(kf);
    const Keyframe& k = graph.keyframe(kf);
    gp.state.poses.push_back(k.pose);
    gp.state.depths.push_back(k.inv_depth);
    gp.problem.pose_fixed.push_back(kf == 0 || !free_pose.count(kf));
    gp.problem.depth_fixed.push_back(!free_depth.count(kf));
  }
  for (const Edge* e : active) gp.problem.edges.push_back({node_of[e->i], node_of[e->j], &*e->flow});
  return gp;
}

void write_back(CovisibilityGraph& graph, const GraphProblem& gp) {
  for (std::size_t n = 0; n < gp.node_kf.size(); ++n) {
    const int kf = gp.node_kf[n];
    if (kf < 0) continue;
    if (!gp.problem.pose_fixed[n]) graph.set_pose(kf, gp.state.poses[n]);
    if (!gp.problem.depth_fixed[n]) graph.keyframe_state(kf).inv_depth = gp.state.depths[n];
  }
}

int refresh_flows(CovisibilityGraph& graph, const FlowOracle& oracle, const PinholeIntrinsics& grid,
                  const std::vector<int>& kfs) {
  const std::set<int> sel(kfs.begin(), kfs.end());
  std::vector<Edge> kept;
  int dropped = 0;
  for (Edge& e : graph.edges()) {
    if (sel.count(e.i) || sel.count(e.j)) {
      const Keyframe& ki = graph.keyframe(e.i);
      const Keyframe& kj = graph.keyframe(e.j);
      try {
        e.flow = oracle.predict_flow(ki.frame_index, kj.frame_index, current_correspondence(ki, kj.pose, grid));
      } catch (const OracleUnavailableError&) {
        ++dropped;
        continue;
      }
    }
    kept.push_back(std::move(e));
  }
  graph.edges() = std::move(kept);
  return dropped;
}

Tracker::Tracker(const FlowOracle& oracle, PinholeIntrinsics grid, TrackerOptions options)
    : oracle_(oracle), grid_(grid), options_(options) {}

void Tracker::record(int frame_index, const SE3Pose& pose) {
  history_.emplace_back(frame_index, pose);
  while (history_.size() > 2) history_.pop_front();
}

void Tracker::sync(const CovisibilityGraph& graph) {
  for (auto& [frame, pose] : history_) {
    for (const Keyframe& kf : graph.keyframes()) {
      if (kf.frame_index == frame) pose = kf.pose;
    }
  }
}

SE3Pose Tracker::predict() const {
  if (history_.empty()) return SE3Pose::identity();
  const SE3Pose& last = history_.back().second;
  if (history_.size() < 2) return last;
  const SE3Pose& prev = history_.front().second;
  return last * (prev.inverse() * last);
}

TrackResult Tracker::track_frame(const CovisibilityGraph& graph, int frame_index, int micro_steps) {
  if (graph.empty()) throw ContractViolation("track_frame: graph has no keyframe");
  TrackResult out;
  const int n = std::min(options_.connect_keyframes, graph.size());
  for (int k = graph.size() - n; k < graph.size(); ++k) out.connected.push_back(k);
  out.initial_pose = predict();
  out.pose = refine_frame_pose(graph, oracle_, grid_, frame_index, out.connected, out.initial_pose,
                               micro_steps >= 0 ? micro_steps : options_.micro_steps, options_.lm);
  out.mean_flow = mean_flow(graph.last(), out.pose, grid_);
  return out;
}

SE3Pose refine_frame_pose(const CovisibilityGraph& graph, const FlowOracle& oracle,
                          const PinholeIntrinsics& grid, int frame_index,
                          const std::vector<int>& kf_ids, const SE3Pose& initial, int steps,
                          const LMOptions& lm) {
  GraphProblem gp;
  gp.problem.intrinsics = grid;
  for (int kf : kf_ids) {
    gp.node_kf.push_back(kf);
    gp.state.poses.push_back(graph.keyframe(kf).pose);
    gp.state.depths.push_back(graph.keyframe(kf).inv_depth);
    gp.problem.pose_fixed.push_back(1);
    gp.problem.depth_fixed.push_back(1);
  }
  const int frame_node = static_cast<int>(kf_ids.size());
  gp.node_kf.push_back(-1);
  gp.state.poses.push_back(initial);
  gp.state.depths.emplace_back();
  gp.problem.pose_fixed.push_back(0);
  gp.problem.depth_fixed.push_back(1);

  std::vector<FlowPrediction> flows(kf_ids.size());
  double lambda = lm.lambda_init;
  for (int s = 0; s < steps; ++s) {
    gp.problem.edges.clear();
    for (std::size_t k = 0; k < kf_ids.size(); ++k) {
      const Keyframe& kf = graph.keyframe(kf_ids[k]);
      try {
        flows[k] = oracle.predict_flow(kf.frame_index, frame_index,
                                       current_correspondence(kf, gp.state.poses[frame_node], grid));
      } catch (const OracleUnavailableError& e) {
        throw TrackingFailure(std::string("frame ") + std::to_string(frame_index) + ": " + e.what());
      }
      gp.problem.edges.push_back({static_cast<int>(k), frame_node, &flows[k]});
    }
    dba_step(gp.problem, gp.state, lambda, lm);
  }
  return gp.state.poses[frame_node];
}

}  // namespace thermap
