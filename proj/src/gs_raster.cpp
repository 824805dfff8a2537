#include "thermap/gs_raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "thermap/errors.hpp"
#include "thermap/metrics.hpp"

namespace thermap {

namespace {

constexpr double kMinCameraZ = 0.01;

Mat3 dR_dw(const Quat& q) {
  Mat3 m;
  m << 0, -q.z(), q.y(), q.z(), 0, -q.x(), -q.y(), q.x(), 0;
  return 2 * m;
}
Mat3 dR_dx(const Quat& q) {
  Mat3 m;
  m << 0, q.y(), q.z(), q.y(), -2 * q.x(), -q.w(), q.z(), q.w(), -2 * q.x();
  return 2 * m;
}
Mat3 dR_dy(const Quat& q) {
  Mat3 m;
  m << -2 * q.y(), q.x(), q.w(), q.x(), 0, q.z(), -q.w(), q.z(), -2 * q.y();
  return 2 * m;
}
Mat3 dR_dz(const Quat& q) {
  Mat3 m;
  m << -2 * q.z(), -q.w(), q.x(), q.w(), -2 * q.z(), q.y(), q.x(), q.y(), 0;
  return 2 * m;
}

// Hot-loop copy of the fields compositing needs.
struct Splat {
  double mx, my;
  double ca, cb, cc;  // conic entries (0,0), (0,1), (1,1)
  double opacity, color, z;
  int index;
};

std::vector<Splat> compact(const std::vector<Gaussian2D>& projected) {
  std::vector<Splat> out;
  out.reserve(projected.size());
  for (const Gaussian2D& g : projected) {
    out.push_back({g.mean.x(), g.mean.y(), g.conic(0, 0), g.conic(0, 1), g.conic(1, 1), g.opacity, g.color, g.z,
                   g.index});
  }
  return out;
}

}  // namespace

double footprint(double t, double* dfdt) {
  if (t >= kFootprintT) {
    if (dfdt) *dfdt = 0;
    return 0;
  }
  const double e = std::exp(-0.5 * t);
  if (t <= kFadeStartT) {
    if (dfdt) *dfdt = -0.5 * e;
    return e;
  }
  const double u = (t - kFadeStartT) / (kFootprintT - kFadeStartT);
  const double s = 1 - u * u * u * (10 + u * (-15 + 6 * u));
  const double ds = -30 * u * u * (u - 1) * (u - 1) / (kFootprintT - kFadeStartT);
  if (dfdt) *dfdt = e * (ds - 0.5 * s);
  return e * s;
}

double gaussian_alpha(const Gaussian2D& g, const Vec2& p) {
  const Vec2 d = p - g.mean;
  return g.opacity * footprint(d.dot(g.conic * d));
}

std::optional<Gaussian2D> project_gaussian(const Gaussian3D& g, const SE3Pose& t_cw,
                                           const PinholeIntrinsics& intr, int index) {
  const Vec3 pc = t_cw * g.mu;
  if (!(pc.z() > kMinCameraZ)) return std::nullopt;
  Gaussian2D out;
  out.pc = pc;
  out.z = pc.z();
  const double iz = 1.0 / pc.z();
  out.mean = Vec2(intr.fx * pc.x() * iz + intr.cx, intr.fy * pc.y() * iz + intr.cy);
  // Centers far outside the view are dropped before the linearized footprint
  // explodes near the image plane.
  if (out.mean.x() < -kGuardBand * intr.width || out.mean.x() > (1 + kGuardBand) * intr.width ||
      out.mean.y() < -kGuardBand * intr.height || out.mean.y() > (1 + kGuardBand) * intr.height) {
    return std::nullopt;
  }
  out.jac << intr.fx * iz, 0, -intr.fx * pc.x() * iz * iz, 0, intr.fy * iz, -intr.fy * pc.y() * iz * iz;
  const Mat3 w = t_cw.rotation_matrix();
  out.cov_cam = w * world_covariance(g) * w.transpose();
  out.cov = out.jac * out.cov_cam * out.jac.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.cov.diagonal().array() += kScreenDilation;
  const double det = out.cov.determinant();
  if (!(det > 0)) return std::nullopt;
  out.conic = out.cov.inverse();
  out.radius = Vec2(std::sqrt(kFootprintT * out.cov(0, 0)), std::sqrt(kFootprintT * out.cov(1, 1)));
  if (out.mean.x() + out.radius.x() < 0 || out.mean.x() - out.radius.x() > intr.width - 1 ||
      out.mean.y() + out.radius.y() < 0 || out.mean.y() - out.radius.y() > intr.height - 1) {
    return std::nullopt;
  }
  out.color = g.color;
  out.opacity = g.opacity();
  out.index = index;
  return out;
}

RenderOutput render(const GaussianMap& map, const SE3Pose& pose, const PinholeIntrinsics& intr) {
  map.check();
  const int w = intr.width;
  const int h = intr.height;
  RenderOutput out;
  out.intensity = GrayImage(w, h, 0.0);
  out.depth = Grid<double>(w, h, 0.0);
  out.alpha = Grid<double>(w, h, 0.0);
  out.n_contrib = Grid<int>(w, h, 0);
  out.final_t = Grid<double>(w, h, 1.0);
  out.map_version = map.version;
  out.map_size = map.size();
  out.contributed.assign(map.size(), 0);

  const SE3Pose t_cw = pose.inverse();
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (auto g = project_gaussian(map.gaussians[k], t_cw, intr, static_cast<int>(k))) {
      out.projected.push_back(*g);
    }
  }
  std::stable_sort(out.projected.begin(), out.projected.end(), [](const Gaussian2D& a, const Gaussian2D& b) {
    return a.z < b.z || (a.z == b.z && a.index < b.index);
  });

  out.tiles_x = (w + kTileSize - 1) / kTileSize;
  out.tiles_y = (h + kTileSize - 1) / kTileSize;
  out.tile_lists.assign(static_cast<std::size_t>(out.tiles_x) * out.tiles_y, {});
  for (std::size_t k = 0; k < out.projected.size(); ++k) {
    const Gaussian2D& g = out.projected[k];
    const int tx0 = std::max(0, static_cast<int>(std::floor((g.mean.x() - g.radius.x()) / kTileSize)));
    const int tx1 = std::min(out.tiles_x - 1, static_cast<int>(std::floor((g.mean.x() + g.radius.x()) / kTileSize)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((g.mean.y() - g.radius.y()) / kTileSize)));
    const int ty1 = std::min(out.tiles_y - 1, static_cast<int>(std::floor((g.mean.y() + g.radius.y()) / kTileSize)));
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) out.tile_lists[ty * out.tiles_x + tx].push_back(static_cast<int>(k));
    }
  }

  const std::vector<Splat> splats = compact(out.projected);
  std::vector<Splat> local;
  for (int ty = 0; ty < out.tiles_y; ++ty) {
    for (int tx = 0; tx < out.tiles_x; ++tx) {
      const std::vector<int>& list = out.tile_lists[ty * out.tiles_x + tx];
      if (list.empty()) continue;
      local.clear();
      for (int k : list) local.push_back(splats[k]);
      for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
        for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
          double t = 1.0, c = 0.0, d = 0.0;
          int last = 0;
          for (std::size_t n = 0; n < local.size(); ++n) {
            const Splat& g = local[n];
            const double dx = x - g.mx;
            const double dy = y - g.my;
            const double m = g.ca * dx * dx + 2 * g.cb * dx * dy + g.cc * dy * dy;
            if (m >= kFootprintT) continue;
            const double a = std::min(g.opacity * footprint(m), kMaxAlpha);
            if (a <= 0) continue;
            const double next = t * (1 - a);
            if (next < kMinTransmittance) break;
            c += g.color * a * t;
            d += g.z * a * t;
            t = next;
            last = static_cast<int>(n) + 1;
            out.contributed[g.index] = 1;
          }
          out.intensity(x, y) = c;
          out.depth(x, y) = d;
          out.alpha(x, y) = 1 - t;
          out.final_t(x, y) = t;
          out.n_contrib(x, y) = last;
        }
      }
    }
  }
  return out;
}

GradientBundle backward(const RenderOutput& tape, const GaussianMap& map, const SE3Pose& pose,
                        const PinholeIntrinsics& intr, const Grid<double>& d_intensity,
                        const Grid<double>& d_depth, const Grid<double>& d_alpha) {
  if (tape.map_version != map.version || tape.map_size != map.size()) {
    throw ContractViolation("backward: render tape does not match the map");
  }
  if (!d_intensity.same_shape(tape.intensity) || !d_depth.same_shape(tape.intensity) ||
      (!d_alpha.empty() && !d_alpha.same_shape(tape.intensity))) {
    throw ContractViolation("backward: gradient image shape mismatch");
  }
  const std::size_t np = tape.projected.size();
  std::vector<Vec2> g_mean(np, Vec2::Zero()), g_abs(np, Vec2::Zero());
  std::vector<Mat2> g_conic(np, Mat2::Zero());
  std::vector<double> g_color(np, 0.0), g_z(np, 0.0), g_opacity(np, 0.0);

  const int w = intr.width;
  const int h = intr.height;
  const std::vector<Splat> splats = compact(tape.projected);
  std::vector<Splat> local;
  for (int ty = 0; ty < tape.tiles_y; ++ty) {
    for (int tx = 0; tx < tape.tiles_x; ++tx) {
      const std::vector<int>& list = tape.tile_lists[ty * tape.tiles_x + tx];
      if (list.empty()) continue;
      local.clear();
      for (int k : list) local.push_back(splats[k]);
      for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
        for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
          const int last = tape.n_contrib(x, y);
          if (last == 0) continue;
          const double dc = d_intensity(x, y);
          const double dd = d_depth(x, y);
          const double da = d_alpha.empty() ? 0.0 : d_alpha(x, y);
          if (dc == 0 && dd == 0 && da == 0) continue;
          const double t_final = tape.final_t(x, y);
          double t = t_final;
          double acc_c = 0, acc_d = 0;
          for (int n = last - 1; n >= 0; --n) {
            const int k = list[n];
            const Splat& g = local[n];
            const Vec2 dv(x - g.mx, y - g.my);
            const double tt = g.ca * dv.x() * dv.x() + 2 * g.cb * dv.x() * dv.y() + g.cc * dv.y() * dv.y();
            if (tt >= kFootprintT) continue;
            double dfdt = 0;
            const double f = footprint(tt, &dfdt);
            const double raw = g.opacity * f;
            if (raw <= 0) continue;
            const double a = std::min(raw, kMaxAlpha);
            t /= (1 - a);  // transmittance in front of this Gaussian
            const double wgt = a * t;
            g_color[k] += dc * wgt;
            g_z[k] += dd * wgt;
            const double dl_da = dc * (g.color * t - acc_c / (1 - a)) + dd * (g.z * t - acc_d / (1 - a)) +
                                 da * (t_final / (1 - a));
            acc_c += g.color * wgt;
            acc_d += g.z * wgt;
            if (raw >= kMaxAlpha) continue;
            g_opacity[k] += dl_da * f;
            const double dl_dt = dl_da * g.opacity * dfdt;
            const Vec2 gm = -2.0 * dl_dt * Vec2(g.ca * dv.x() + g.cb * dv.y(), g.cb * dv.x() + g.cc * dv.y());
            g_mean[k] += gm;
            g_abs[k] += gm.cwiseAbs();
            g_conic[k] += dl_dt * dv * dv.transpose();
          }
        }
      }
    }
  }

  GradientBundle out;
  out.grads.assign(map.size(), GaussianParams::Zero());
  out.mean2d.assign(map.size(), Vec2::Zero());
  out.abs_mean2d.assign(map.size(), Vec2::Zero());
  out.visible.assign(map.size(), 0);
  const SE3Pose t_cw = pose.inverse();
  const Mat3 wr = t_cw.rotation_matrix();
  for (std::size_t k = 0; k < np; ++k) {
    const Gaussian2D& g2 = tape.projected[k];
    const Gaussian3D& g = map.gaussians[g2.index];
    GaussianParams& out_g = out.grads[g2.index];
    out.mean2d[g2.index] = g_mean[k];
    out.abs_mean2d[g2.index] = g_abs[k];
    out.visible[g2.index] = 1;

    // Screen covariance -> camera covariance and projection Jacobian.
    const Mat2 g_cov = -g2.conic * g_conic[k] * g2.conic;
    const Mat3 g_cov_cam = g2.jac.transpose() * g_cov * g2.jac;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov * g2.jac * g2.cov_cam;

    const double iz = 1.0 / g2.pc.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    Vec3 g_pc = g2.jac.transpose() * g_mean[k];
    g_pc.z() += g_z[k];
    g_pc.x() += g_jac(0, 2) * (-intr.fx * iz2);
    g_pc.y() += g_jac(1, 2) * (-intr.fy * iz2);
    g_pc.z() += g_jac(0, 0) * (-intr.fx * iz2) + g_jac(0, 2) * (2 * intr.fx * g2.pc.x() * iz3) +
                g_jac(1, 1) * (-intr.fy * iz2) + g_jac(1, 2) * (2 * intr.fy * g2.pc.y() * iz3);
    out_g.segment<3>(kPosition) = wr.transpose() * g_pc;

    // World covariance R D R^T with D = diag(exp(2 s)).
    const Mat3 g_cov_w = wr.transpose() * g_cov_cam * wr;
    const Quat q = g.rotation.normalized();
    const Mat3 r = q.toRotationMatrix();
    const Vec3 dvals = (2.0 * g.log_scale).array().exp();
    const Mat3 rt_g_r = r.transpose() * g_cov_w * r;
    for (int a = 0; a < 3; ++a) out_g(kLogScale + a) = 2.0 * dvals(a) * rt_g_r(a, a);
    const Mat3 g_r = 2.0 * g_cov_w * r * dvals.asDiagonal();
    Vec4 g_q(g_r.cwiseProduct(dR_dw(q)).sum(), g_r.cwiseProduct(dR_dx(q)).sum(),
             g_r.cwiseProduct(dR_dy(q)).sum(), g_r.cwiseProduct(dR_dz(q)).sum());
    const Vec4 qv(q.w(), q.x(), q.y(), q.z());
    g_q -= qv * qv.dot(g_q);  // through the normalization q / |q| at |q| = 1
    out_g.segment<4>(kRotation) = g_q;

    out_g(kOpacity) = g_opacity[k] * g2.opacity * (1 - g2.opacity);
    out_g(kColor) = g_color[k];
  }
  return out;
}

void accumulate_stats(GaussianMap& map, const GradientBundle& grads, const PinholeIntrinsics& intr) {
  map.check();
  if (grads.grads.size() != map.size()) throw ContractViolation("accumulate_stats: size mismatch");
  const Vec2 to_ndc(0.5 * intr.width, 0.5 * intr.height);
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (!grads.visible[k]) continue;
    map.stats[k].abs_grad_sum += grads.abs_mean2d[k].cwiseProduct(to_ndc).norm();
    ++map.stats[k].count;
  }
}

double combine_loss(double color, double ssim_term, double depth, const LossWeights& w) {
  return (1 - w.alpha) * color + w.alpha * ssim_term + w.beta * depth;
}

LossResult loss(const RenderOutput& render, const GrayImage& target, const Grid<double>& proxy_inv_depth,
                const LossWeights& weights) {
  if (!render.intensity.same_shape(target) || !proxy_inv_depth.same_shape(target)) {
    throw ContractViolation("loss: shape mismatch");
  }
  const int w = target.width();
  const int h = target.height();
  const double n = static_cast<double>(w) * h;
  LossResult out;
  out.d_intensity = Grid<double>(w, h, 0.0);
  out.d_depth = Grid<double>(w, h, 0.0);

  for (std::size_t k = 0; k < target.size(); ++k) {
    const double diff = render.intensity[k] - target[k];
    out.terms.color += std::abs(diff);
    out.d_intensity[k] = (1 - weights.alpha) * ((diff > 0) - (diff < 0)) / n;
  }
  out.terms.color /= n;

  if (weights.alpha != 0) {
    const SsimGradient s = ssim_with_gradient(render.intensity, target);
    out.terms.ssim = 1 - s.value;
    for (std::size_t k = 0; k < target.size(); ++k) out.d_intensity[k] -= weights.alpha * s.grad_a[k];
  } else {
    out.terms.ssim = 1 - ssim(render.intensity, target);
  }

  std::size_t m = 0;
  for (std::size_t k = 0; k < target.size(); ++k) m += render.alpha[k] > 0.5;
  if (m > 0) {
    for (std::size_t k = 0; k < target.size(); ++k) {
      if (!(render.alpha[k] > 0.5)) continue;
      const double diff = render.depth[k] - 1.0 / std::max(proxy_inv_depth[k], kMinInvDepth);
      out.terms.depth += std::abs(diff);
      out.d_depth[k] = weights.beta * ((diff > 0) - (diff < 0)) / static_cast<double>(m);
    }
    out.terms.depth /= static_cast<double>(m);
  }
  out.terms.total = combine_loss(out.terms.color, out.terms.ssim, out.terms.depth, weights);
  return out;
}

}  // namespace thermap
