#include "thermap/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> ssim_kernel() {
  std::array<double, kWin> k{};
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    k[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "valid" correlation.
Grid<double> filter_valid(const Grid<double>& in) {
  static const auto k = ssim_kernel();
  const int ow = in.width() - kWin + 1;
  const int oh = in.height() - kWin + 1;
  Grid<double> tmp(ow, in.height());
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += k[i] * in(x + i, y);
      tmp(x, y) = s;
    }
  }
  Grid<double> out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += k[i] * tmp(x, y + i);
      out(x, y) = s;
    }
  }
  return out;
}

// Adjoint of filter_valid.
Grid<double> filter_valid_adjoint(const Grid<double>& g, int width, int height) {
  static const auto k = ssim_kernel();
  Grid<double> tmp(g.width(), height, 0.0);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      for (int i = 0; i < kWin; ++i) tmp(x, y + i) += k[i] * g(x, y);
    }
  }
  Grid<double> out(width, height, 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < g.width(); ++x) {
      for (int i = 0; i < kWin; ++i) out(x + i, y) += k[i] * tmp(x, y);
    }
  }
  return out;
}

Grid<double> product(const Grid<double>& a, const Grid<double>& b) {
  Grid<double> out(a.width(), a.height());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k];
  return out;
}

void check_pair(const GrayImage& a, const GrayImage& b) {
  if (!a.same_shape(b)) throw ContractViolation("image shapes differ");
  if (a.width() < kWin || a.height() < kWin) throw ContractViolation("ssim: image smaller than 11x11");
}

SsimGradient ssim_impl(const GrayImage& a, const GrayImage& b, bool with_grad) {
  check_pair(a, b);
  const Grid<double> mu_a = filter_valid(a);
  const Grid<double> mu_b = filter_valid(b);
  const Grid<double> e_aa = filter_valid(product(a, a));
  const Grid<double> e_bb = filter_valid(product(b, b));
  const Grid<double> e_ab = filter_valid(product(a, b));
  const std::size_t n = mu_a.size();

  SsimGradient out;
  Grid<double> ca, cb, cc;
  if (with_grad) {
    ca = cb = cc = Grid<double>(mu_a.width(), mu_a.height());
  }
  double sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double ma = mu_a[k], mb = mu_b[k];
    const double va = e_aa[k] - ma * ma;
    const double vb = e_bb[k] - mb * mb;
    const double cab = e_ab[k] - ma * mb;
    const double a1 = 2 * ma * mb + kC1, a2 = 2 * cab + kC2;
    const double b1 = ma * ma + mb * mb + kC1, b2 = va + vb + kC2;
    const double s = a1 * a2 / (b1 * b2);
    sum += s;
    if (!with_grad) continue;
    const double ds_dma = 2 * mb * a2 / (b1 * b2) - s * 2 * ma / b1;
    const double ds_dva = -s / b2;
    const double ds_dcab = 2 * a1 / (b1 * b2);
    ca[k] = (ds_dma - 2 * ma * ds_dva - mb * ds_dcab) / n;
    cb[k] = 2 * ds_dva / n;
    cc[k] = ds_dcab / n;
  }
  out.value = sum / n;
  if (with_grad) {
    const Grid<double> ga = filter_valid_adjoint(ca, a.width(), a.height());
    const Grid<double> gb = filter_valid_adjoint(cb, a.width(), a.height());
    const Grid<double> gc = filter_valid_adjoint(cc, a.width(), a.height());
    out.grad_a = Grid<double>(a.width(), a.height());
    for (std::size_t k = 0; k < a.size(); ++k) out.grad_a[k] = ga[k] + a[k] * gb[k] + b[k] * gc[k];
  }
  return out;
}

}  // namespace

AteResult ate(const Trajectory& est, const Trajectory& ref, double max_dt) {
  std::vector<Vec3> src, dst;
  for (const TimedPose& e : est) {
    const auto it = std::lower_bound(ref.begin(), ref.end(), e.timestamp,
                                     [](const TimedPose& p, double t) { return p.timestamp < t; });
    const TimedPose* best = nullptr;
    if (it != ref.end()) best = &*it;
    if (it != ref.begin() && (!best || e.timestamp - std::prev(it)->timestamp < best->timestamp - e.timestamp)) {
      best = &*std::prev(it);
    }
    if (!best || std::abs(best->timestamp - e.timestamp) > max_dt) continue;
    src.push_back(e.pose.translation);
    dst.push_back(best->pose.translation);
  }
  if (src.size() < 3) {
    throw InsufficientOverlapError("ate: only " + std::to_string(src.size()) + " associated poses");
  }
  AteResult out;
  out.pairs = static_cast<int>(src.size());
  out.alignment = sim3_umeyama(src, dst);
  out.rmse = std::sqrt(alignment_residual(out.alignment, src, dst) / static_cast<double>(src.size()));
  return out;
}

double ate_rmse(const Trajectory& est, const Trajectory& ref, double max_dt) {
  return ate(est, ref, max_dt).rmse;
}

double psnr(const GrayImage& a, const GrayImage& b) {
  if (!a.same_shape(b)) throw ContractViolation("psnr: image shapes differ");
  if (a.empty()) throw ContractViolation("psnr: empty image");
  double mse = 0;
  for (std::size_t k = 0; k < a.size(); ++k) mse += (a[k] - b[k]) * (a[k] - b[k]);
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const GrayImage& a, const GrayImage& b) { return ssim_impl(a, b, false).value; }

SsimGradient ssim_with_gradient(const GrayImage& a, const GrayImage& b) { return ssim_impl(a, b, true); }

}  // namespace thermap
