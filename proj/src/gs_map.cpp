#include "thermap/gs_map.hpp"

#include <cmath>
#include <random>

#include "thermap/errors.hpp"

namespace thermap {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  if (!(p > 0 && p < 1)) throw ContractViolation("logit: argument outside (0, 1)");
  return std::log(p / (1 - p));
}

double Gaussian3D::opacity() const { return sigmoid(opacity_logit); }

GaussianParams Gaussian3D::params() const {
  GaussianParams p;
  p.segment<3>(kPosition) = mu;
  p.segment<3>(kLogScale) = log_scale;
  p.segment<4>(kRotation) << rotation.w(), rotation.x(), rotation.y(), rotation.z();
  p(kOpacity) = opacity_logit;
  p(kColor) = color;
  return p;
}

void Gaussian3D::set_params(const GaussianParams& p) {
  mu = p.segment<3>(kPosition);
  log_scale = p.segment<3>(kLogScale);
  Quat q(p(kRotation), p(kRotation + 1), p(kRotation + 2), p(kRotation + 3));
  rotation = q.norm() > 1e-12 ? q.normalized() : Quat::Identity();
  opacity_logit = p(kOpacity);
  color = p(kColor);
}

Mat3 world_covariance(const Gaussian3D& g) {
  const Mat3 rs = g.rotation.normalized().toRotationMatrix() * g.scale().asDiagonal();
  return rs * rs.transpose();
}

void GaussianMap::add(const Gaussian3D& g) {
  gaussians.push_back(g);
  stats.emplace_back();
  adam_m.push_back(GaussianParams::Zero());
  adam_v.push_back(GaussianParams::Zero());
  ++version;
}

void GaussianMap::add(const std::vector<Gaussian3D>& gs) {
  for (const Gaussian3D& g : gs) add(g);
}

void GaussianMap::filter(const std::vector<std::uint8_t>& keep) {
  check();
  if (keep.size() != gaussians.size()) throw ContractViolation("GaussianMap::filter: size mismatch");
  std::size_t o = 0;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (!keep[k]) continue;
    gaussians[o] = gaussians[k];
    stats[o] = stats[k];
    adam_m[o] = adam_m[k];
    adam_v[o] = adam_v[k];
    ++o;
  }
  gaussians.resize(o);
  stats.resize(o);
  adam_m.resize(o);
  adam_v.resize(o);
  ++version;
}

void GaussianMap::reset_stats() {
  for (GaussianStats& s : stats) s = {};
}

void GaussianMap::check() const {
  const std::size_t n = gaussians.size();
  if (stats.size() != n || adam_m.size() != n || adam_v.size() != n) {
    throw ContractViolation("GaussianMap: side arrays out of sync");
  }
}

std::vector<Gaussian3D> spawn_from_keyframe(const SE3Pose& pose, const GrayImage& image,
                                            const Grid<double>& inv_depth,
                                            const PinholeIntrinsics& intr, int stride,
                                            int keyframe_id, const Mask* covered) {
  if (stride < 1) throw ContractViolation("spawn_from_keyframe: stride must be >= 1");
  if (!image.same_shape(inv_depth) || image.width() != intr.width || image.height() != intr.height) {
    throw ContractViolation("spawn_from_keyframe: image, depth and intrinsics disagree");
  }
  if (covered && !covered->same_shape(image)) throw ContractViolation("spawn_from_keyframe: mask shape");
  const double f = 0.5 * (intr.fx + intr.fy);
  std::vector<Gaussian3D> out;
  for (int y = 0; y < image.height(); y += stride) {
    for (int x = 0; x < image.width(); x += stride) {
      if (covered && (*covered)(x, y)) continue;
      const double d = std::clamp(inv_depth(x, y), kMinInvDepth, kMaxInvDepth);
      Gaussian3D g;
      g.mu = pose * backproject(Vec2(x, y), d, intr);
      g.log_scale = Vec3::Constant(std::log(stride / (d * f)));
      g.opacity_logit = 0.0;
      g.color = image(x, y);
      g.created_at = keyframe_id;
      out.push_back(g);
    }
  }
  return out;
}

DensifyResult densify(GaussianMap& map, const DensifyConfig& cfg, std::uint64_t seed) {
  map.check();
  DensifyResult res;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = map.size();
  std::vector<std::uint8_t> keep(n, 1);
  std::vector<Gaussian3D> born;
  for (std::size_t k = 0; k < n; ++k) {
    const GaussianStats& s = map.stats[k];
    if (s.count == 0 || !(s.abs_grad_sum / s.count > cfg.grad_threshold)) continue;
    const Gaussian3D& g = map.gaussians[k];
    const Mat3 r = g.rotation.toRotationMatrix();
    const Vec3 scale = g.scale();
    auto sample = [&] {
      const Vec3 n3(normal(rng), normal(rng), normal(rng));
      return Vec3(r * scale.cwiseProduct(n3));
    };
    if (scale.maxCoeff() < cfg.scale_split_threshold) {
      Gaussian3D c = g;
      c.mu += sample();
      born.push_back(c);
      ++res.cloned;
    } else {
      for (int child = 0; child < 2; ++child) {
        Gaussian3D c = g;
        c.mu += sample();
        c.log_scale.array() -= std::log(cfg.split_factor);
        born.push_back(c);
      }
      keep[k] = 0;
      ++res.split;
    }
  }
  if (res.split > 0) map.filter(keep);
  map.add(born);
  map.reset_stats();
  return res;
}

int prune(GaussianMap& map, const DensifyConfig& cfg, int current_kf_id) {
  map.check();
  std::vector<std::uint8_t> keep(map.size(), 1);
  int removed = 0;
  for (std::size_t k = 0; k < map.size(); ++k) {
    const Gaussian3D& g = map.gaussians[k];
    const double o = g.opacity();
    const bool transparent = o < cfg.opacity_prune;
    const bool large_faint = g.scale().maxCoeff() > cfg.extent_prune_scale && o < 0.5;
    const bool unobserved =
        current_kf_id - g.created_at >= cfg.min_observations && g.observations < cfg.min_observations;
    if (transparent || large_faint || unobserved) {
      keep[k] = 0;
      ++removed;
    }
  }
  if (removed > 0) map.filter(keep);
  return removed;
}

void update_observations(GaussianMap& map, const std::vector<std::uint8_t>& contributed) {
  if (contributed.size() != map.size()) throw ContractViolation("update_observations: size mismatch");
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (contributed[k]) ++map.gaussians[k].observations;
  }
}

}  // namespace thermap
