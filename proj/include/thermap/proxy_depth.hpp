#pragma once

#include <cstdint>

#include "thermap/dso_refine.hpp"
#include "thermap/frame_graph.hpp"

namespace thermap {

enum class Provenance : std::uint8_t { kOdometry = 0, kMono = 1 };

/// Dense inverse depth supervising the Gaussian map.
struct ProxyDepthMap {
  InverseDepthMap grid;            // depth-grid resolution, every pixel valid
  Grid<Provenance> provenance;     // same shape as grid
  Grid<double> full;               // inverse depth at image resolution
  AffineFit fit;

  int count(Provenance p) const;
};

/// Aligns the inverse mono prior to the refined inverse depth over low-error
/// pixels (same closed form and fallback as affine_init).
AffineFit fit_proxy_affine(const InverseDepthMap& d_hat, const MonoDepthMap& mono,
                           const PixelClassMask& classes);

/// Low-error pixels keep the refined depth; all others take the affine-mapped
/// prior. Pixels with neither fall back to the refined depth, then to the
/// median of the filled cells.
ProxyDepthMap fuse(const InverseDepthMap& d_hat, const MonoDepthMap& mono, const AffineFit& fit,
                   const PixelClassMask& classes, int full_width, int full_height, int factor = 8);

/// Bilinear upsampling of grid values to image resolution; cells straddling a
/// provenance change use the nearest grid value instead.
Grid<double> upsample(const Grid<double>& g, const Grid<Provenance>& provenance, int full_width,
                      int full_height, int factor);

ProxyDepthMap build_proxy(const Keyframe& kf, int full_width, int full_height, int factor = 8);

}  // namespace thermap
