#include "thermap/proxy_depth.hpp"

#include <algorithm>
#include <cmath>

#include "thermap/errors.hpp"

namespace thermap {

int ProxyDepthMap::count(Provenance p) const {
  return static_cast<int>(std::count(provenance.begin(), provenance.end(), p));
}

AffineFit fit_proxy_affine(const InverseDepthMap& d_hat, const MonoDepthMap& mono,
                           const PixelClassMask& classes) {
  return affine_init(d_hat, mono, classes);
}

ProxyDepthMap fuse(const InverseDepthMap& d_hat, const MonoDepthMap& mono, const AffineFit& fit,
                   const PixelClassMask& classes, int full_width, int full_height, int factor) {
  if (!mono.values.same_shape(d_hat.values)) throw ContractViolation("fuse: prior shape mismatch");
  const bool use_classes = classes.same_shape(d_hat.values);
  const int w = d_hat.width();
  const int h = d_hat.height();
  ProxyDepthMap out{InverseDepthMap(w, h), Grid<Provenance>(w, h, Provenance::kOdometry), {}, fit};
  Mask filled(w, h, 1);
  std::vector<double> vals;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool low = use_classes && classes(x, y) == PixelClass::kLow && d_hat.is_valid(x, y);
      double v;
      if (low) {
        v = d_hat.values(x, y);
      } else if (mono.valid(x, y) && mono.values(x, y) > 0) {
        v = fit.theta / mono.values(x, y) + fit.gamma;
        out.provenance(x, y) = Provenance::kMono;
      } else if (d_hat.is_valid(x, y)) {
        v = d_hat.values(x, y);
      } else {
        filled(x, y) = 0;
        continue;
      }
      out.grid.values(x, y) = std::clamp(v, kMinInvDepth, kMaxInvDepth);
      vals.push_back(out.grid.values(x, y));
    }
  }
  if (vals.size() < out.grid.values.size()) {
    double fill = 1.0;
    if (!vals.empty()) {
      auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
      std::nth_element(vals.begin(), mid, vals.end());
      fill = *mid;
    }
    for (std::size_t k = 0; k < filled.size(); ++k) {
      if (!filled[k]) out.grid.values[k] = fill;
    }
  }
  out.full = upsample(out.grid.values, out.provenance, full_width, full_height, factor);
  return out;
}

Grid<double> upsample(const Grid<double>& g, const Grid<Provenance>& provenance, int full_width,
                      int full_height, int factor) {
  Grid<double> out(full_width, full_height);
  const int gw = g.width();
  const int gh = g.height();
  for (int v = 0; v < full_height; ++v) {
    const double gy = std::clamp(static_cast<double>(v) / factor, 0.0, gh - 1.0);
    const int y0 = std::min(static_cast<int>(gy), gh - 1);
    const int y1 = std::min(y0 + 1, gh - 1);
    for (int u = 0; u < full_width; ++u) {
      const double gx = std::clamp(static_cast<double>(u) / factor, 0.0, gw - 1.0);
      const int x0 = std::min(static_cast<int>(gx), gw - 1);
      const int x1 = std::min(x0 + 1, gw - 1);
      const Provenance p = provenance(x0, y0);
      if (provenance(x1, y0) != p || provenance(x0, y1) != p || provenance(x1, y1) != p) {
        out(u, v) = g(static_cast<int>(std::lround(gx)), static_cast<int>(std::lround(gy)));
      } else {
        out(u, v) = sample_bilinear(g, gx, gy);
      }
    }
  }
  return out;
}

ProxyDepthMap build_proxy(const Keyframe& kf, int full_width, int full_height, int factor) {
  const AffineFit fit = fit_proxy_affine(kf.inv_depth, kf.mono, kf.classes);
  return fuse(kf.inv_depth, kf.mono, fit, kf.classes, full_width, full_height, factor);
}

}  // namespace thermap
