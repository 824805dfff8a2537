#include "thermap/oracles.hpp"

#include <cmath>
#include <random>
#include <regex>
#include <string>

#include "thermap/dataset_io.hpp"
#include "thermap/errors.hpp"

namespace thermap {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

InverseDepthMap GroundTruth::grid_inverse_depth(int frame) const {
  const auto it = depths.find(frame);
  if (it == depths.end()) {
    throw OracleUnavailableError("no ground-truth depth for frame " + std::to_string(frame));
  }
  const PinholeIntrinsics g = grid_intrinsics();
  InverseDepthMap out(g.width, g.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const double z = it->second(x * grid_factor, y * grid_factor);
      if (z > 0 && std::isfinite(z)) {
        out.values(x, y) = std::clamp(1.0 / z, kMinInvDepth, kMaxInvDepth);
      } else {
        out.valid(x, y) = 0;
      }
    }
  }
  return out;
}

SyntheticFlowOracle::SyntheticFlowOracle(std::shared_ptr<const GroundTruth> gt,
                                         SyntheticFlowOptions options)
    : gt_(std::move(gt)), options_(options) {}

FlowPrediction SyntheticFlowOracle::predict_flow(int frame_i, int frame_j,
                                                 const Grid<Vec2>& current) const {
  const auto pi = gt_->poses.find(frame_i);
  const auto pj = gt_->poses.find(frame_j);
  const auto dj = gt_->depths.find(frame_j);
  if (pi == gt_->poses.end() || pj == gt_->poses.end() || dj == gt_->depths.end()) {
    throw OracleUnavailableError("no ground truth for edge (" + std::to_string(frame_i) + ", " +
                                 std::to_string(frame_j) + ")");
  }
  const InverseDepthMap di = gt_->grid_inverse_depth(frame_i);
  const PinholeIntrinsics g = gt_->grid_intrinsics();
  if (current.width() != g.width || current.height() != g.height) {
    throw ContractViolation("predict_flow: correspondence grid has wrong shape");
  }
  const SE3Pose t_ji = pj->second.inverse() * pi->second;
  const Grid<double>& depth_j = dj->second;
  const int factor = gt_->grid_factor;

  std::mt19937_64 rng(mix_seed(options_.seed, std::uint64_t(frame_i), std::uint64_t(frame_j)));
  std::normal_distribution<double> noise(0.0, 1.0);

  FlowPrediction out{current, Grid<Vec2>(g.width, g.height, Vec2::Zero()),
                     Grid<Vec2>(g.width, g.height, Vec2::Zero())};
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      // Draw noise for every pixel so the stream does not depend on visibility.
      const Vec2 n(noise(rng), noise(rng));
      if (!di.is_valid(x, y)) continue;
      const Vec3 pc = t_ji * backproject(Vec2(x, y), di.values(x, y), g);
      if (!(pc.z() > 1e-8)) continue;
      const Vec2 target = project(pc, g).pixel;
      out.r(x, y) = target - current(x, y) + options_.sigma * n;
      if (!g.contains(target)) continue;
      const int fx = std::clamp(static_cast<int>(std::lround(target.x() * factor)), 0, depth_j.width() - 1);
      const int fy = std::clamp(static_cast<int>(std::lround(target.y() * factor)), 0, depth_j.height() - 1);
      const double zj = depth_j(fx, fy);
      if (zj > 0 && std::abs(pc.z() - zj) <= options_.occlusion_tolerance * zj) out.w(x, y) = Vec2(1, 1);
    }
  }
  return out;
}

MonoDepthMap synthetic_mono_depth(const InverseDepthMap& gt_inv_depth, double theta, double gamma,
                                  double sigma, std::uint64_t seed, int source_id) {
  if (!(theta > 0)) throw ContractViolation("synthetic_mono_depth: theta must be positive");
  std::mt19937_64 rng(mix_seed(seed, 0x6d6f6e6fu, std::uint64_t(source_id + 1)));
  std::normal_distribution<double> noise(0.0, 1.0);
  MonoDepthMap out{Grid<double>(gt_inv_depth.width(), gt_inv_depth.height(), 1.0),
                   Mask(gt_inv_depth.width(), gt_inv_depth.height(), 1), source_id};
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double n = noise(rng);
      if (!gt_inv_depth.is_valid(x, y)) {
        out.valid(x, y) = 0;
        continue;
      }
      const double inv_mono = (gt_inv_depth.values(x, y) - gamma) / theta + sigma * n;
      if (inv_mono < kMinInvDepth) {
        out.values(x, y) = 1.0 / kMinInvDepth;
        out.valid(x, y) = 0;
      } else {
        out.values(x, y) = 1.0 / inv_mono;
      }
    }
  }
  return out;
}

SyntheticDepthOracle::SyntheticDepthOracle(std::shared_ptr<const GroundTruth> gt,
                                           SyntheticDepthOptions options)
    : gt_(std::move(gt)), options_(options) {}

MonoDepthMap SyntheticDepthOracle::predict_depth(int frame) const {
  return synthetic_mono_depth(gt_->grid_inverse_depth(frame), options_.theta, options_.gamma,
                              options_.sigma, options_.seed, frame);
}

FileOracle::FileOracle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("oracle directory not found: " + dir.string());
  const std::regex depth_re(R"(depth_(\d+)\.pfm)");
  const std::regex flow_re(R"(flow_(\d+)_(\d+)\.pfm)");
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& path : entries) {
    const std::string name = path.filename().string();
    std::smatch m;
    if (std::regex_match(name, m, depth_re)) {
      const PfmImage p = pfm_read(path);
      if (p.channels != 1) {
        throw ParseError(path.string(), ParseError::Unit::kByte, 0, "depth map must have 1 channel");
      }
      MonoDepthMap d{from_pfm(p), Mask(p.width, p.height, 1), std::stoi(m[1])};
      for (std::size_t k = 0; k < d.values.size(); ++k) {
        if (!(d.values[k] > 0) || !std::isfinite(d.values[k])) d.valid[k] = 0;
      }
      depths_.emplace(d.source_id, std::move(d));
    } else if (std::regex_match(name, m, flow_re)) {
      const int i = std::stoi(m[1]);
      const int j = std::stoi(m[2]);
      const auto conf_path = dir / ("conf_" + std::string(m[1]) + "_" + std::string(m[2]) + ".pfm");
      const PfmImage f = pfm_read(path);
      if (!std::filesystem::exists(conf_path)) throw IoError("missing confidence file " + conf_path.string());
      const PfmImage c = pfm_read(conf_path);
      if (f.channels != 3) throw ParseError(path.string(), ParseError::Unit::kByte, 0, "flow must have 3 channels");
      if (c.channels != 3) {
        throw ParseError(conf_path.string(), ParseError::Unit::kByte, 0, "confidence must have 3 channels");
      }
      if (f.width != c.width || f.height != c.height) {
        throw ParseError(conf_path.string(), ParseError::Unit::kByte, 0, "flow/confidence size mismatch");
      }
      Grid<Vec2> flow(f.width, f.height), conf(f.width, f.height);
      for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
          flow(x, y) = Vec2(f.at(x, y, 0), f.at(x, y, 1));
          conf(x, y) = Vec2(std::max(0.0f, c.at(x, y, 0)), std::max(0.0f, c.at(x, y, 1)));
        }
      }
      flows_.emplace(std::make_pair(i, j), std::make_pair(std::move(flow), std::move(conf)));
    }
  }
}

FlowPrediction FileOracle::predict_flow(int frame_i, int frame_j, const Grid<Vec2>& current) const {
  const auto it = flows_.find({frame_i, frame_j});
  if (it == flows_.end()) {
    throw OracleUnavailableError("no stored flow for edge (" + std::to_string(frame_i) + ", " +
                                 std::to_string(frame_j) + ")");
  }
  const auto& [flow, conf] = it->second;
  if (!flow.same_shape(current)) throw ContractViolation("predict_flow: grid shape mismatch");
  FlowPrediction out{current, Grid<Vec2>(flow.width(), flow.height()), conf};
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) out.r(x, y) = Vec2(x, y) + flow(x, y) - current(x, y);
  }
  return out;
}

MonoDepthMap FileOracle::predict_depth(int frame) const {
  const auto it = depths_.find(frame);
  if (it == depths_.end()) throw OracleUnavailableError("no stored depth for frame " + std::to_string(frame));
  return it->second;
}

OraclePair load_file_oracle(const std::filesystem::path& dir) {
  auto oracle = std::make_shared<FileOracle>(dir);
  return {oracle, oracle};
}

}  // namespace thermap
