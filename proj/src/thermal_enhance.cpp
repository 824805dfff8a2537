#include "thermap/thermal_enhance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

struct Range {
  double lo = 0, hi = 0;
  bool degenerate() const { return hi - lo < 1.0; }
};

Range global_range(const RawThermalImage& raw, double pct_lo, double pct_hi) {
  std::vector<double> all(raw.values.begin(), raw.values.end());
  Range r{percentile(all, pct_lo), percentile(all, pct_hi)};
  if (r.degenerate()) {
    const auto [mn, mx] = std::minmax_element(raw.values.begin(), raw.values.end());
    r = {double(*mn), double(*mx)};
  }
  return r;
}

// One pass of 5-point averaging with edge replication.
Grid<double> smooth_once(const Grid<double>& f) {
  Grid<double> out(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      const auto at = [&](int xx, int yy) {
        return f(std::clamp(xx, 0, f.width() - 1), std::clamp(yy, 0, f.height() - 1));
      };
      out(x, y) = (at(x, y) + at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) / 5.0;
    }
  }
  return out;
}

// 3x3 max (or min) filter on the cell grid.
Grid<double> extremum3(const Grid<double>& f, bool take_max) {
  Grid<double> out(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      double e = f(x, y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double v = f(std::clamp(x + dx, 0, f.width() - 1), std::clamp(y + dy, 0, f.height() - 1));
          e = take_max ? std::max(e, v) : std::min(e, v);
        }
      }
      out(x, y) = e;
    }
  }
  return out;
}

double rescale(double v, double lo, double hi) {
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

}  // namespace

void RawThermalImage::validate() const {
  if (bit_depth != 8 && bit_depth != 14 && bit_depth != 16) {
    throw ContractViolation("raw thermal image: unsupported bit depth " + std::to_string(bit_depth));
  }
  const double mx = max_count();
  for (auto v : values) {
    if (v > mx) throw ContractViolation("raw thermal image: value exceeds bit depth");
  }
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw ContractViolation("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * double(values.size() - 1);
  const auto i0 = static_cast<std::size_t>(std::floor(pos));
  const std::size_t i1 = std::min(i0 + 1, values.size() - 1);
  const double f = pos - double(i0);
  return values[i0] * (1 - f) + values[i1] * f;
}

GrayImage fieldscale(const RawThermalImage& raw, const FieldScaleOptions& options) {
  const int w = raw.values.width();
  const int h = raw.values.height();
  const int gx = options.grid_x;
  const int gy = options.grid_y;
  if (gx < 1 || gy < 1 || w < gx || h < gy) {
    throw ContractViolation("fieldscale: image smaller than the cell grid");
  }

  const Range global = global_range(raw, options.percentile_low, options.percentile_high);
  if (global.degenerate()) return GrayImage(w, h, 0.5);

  Grid<double> min_field(gx, gy), max_field(gx, gy);
  std::vector<double> cell;
  for (int cy = 0; cy < gy; ++cy) {
    for (int cx = 0; cx < gx; ++cx) {
      const int x0 = cx * w / gx, x1 = (cx + 1) * w / gx;
      const int y0 = cy * h / gy, y1 = (cy + 1) * h / gy;
      cell.clear();
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) cell.push_back(raw.values(x, y));
      }
      Range r{percentile(cell, options.percentile_low), percentile(cell, options.percentile_high)};
      if (r.degenerate()) r = global;
      min_field(cx, cy) = r.lo;
      max_field(cx, cy) = r.hi;
    }
  }
  // Smoothing alone pulls a hot cell's max below its own content. Bilinear
  // lookups only mix a pixel's cell with its 8 neighbors, so bounding the
  // fields by the neighborhood extremes keeps every pixel inside [lo, hi].
  const Grid<double> min_bound = extremum3(min_field, false);
  const Grid<double> max_bound = extremum3(max_field, true);
  for (int p = 0; p < options.smoothing_passes; ++p) {
    min_field = smooth_once(min_field);
    max_field = smooth_once(max_field);
  }
  for (std::size_t i = 0; i < min_field.size(); ++i) {
    min_field[i] = std::min(min_field[i], min_bound[i]);
    max_field[i] = std::max(max_field[i], max_bound[i]);
  }

  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    // Cell-center coordinates; no extrapolation beyond the outer centers.
    const double fy = std::clamp((y + 0.5) * gy / h - 0.5, 0.0, double(gy - 1));
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * gx / w - 0.5, 0.0, double(gx - 1));
      double lo = sample_bilinear(min_field, fx, fy);
      double hi = sample_bilinear(max_field, fx, fy);
      if (hi - lo < 1.0) {
        lo = global.lo;
        hi = global.hi;
      }
      out(x, y) = rescale(raw.values(x, y), lo, hi);
    }
  }
  return out;
}

GrayImage naive_rescale(const RawThermalImage& raw) {
  const int w = raw.values.width();
  const int h = raw.values.height();
  if (raw.values.empty()) throw ContractViolation("naive_rescale: empty image");
  const Range global = global_range(raw, 1.0, 99.0);
  if (global.degenerate()) return GrayImage(w, h, 0.5);

  constexpr int kBins = 256;
  Grid<int> bins(w, h);
  std::array<std::size_t, kBins> hist{};
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double v = rescale(raw.values[i], global.lo, global.hi);
    const int b = std::min(kBins - 1, static_cast<int>(v * kBins));
    bins[i] = b;
    ++hist[b];
  }
  // The end bins hold the percentile-clipped tails; equalizing them along
  // with the interior would squeeze every other level by the clipped mass.
  std::array<double, kBins> cdf{};
  std::size_t acc = 0;
  for (int b = 0; b < kBins; ++b) {
    acc += hist[b];
    cdf[b] = double(acc);
  }
  const double base = cdf[0];
  const double span = cdf[kBins - 2] - base;
  GrayImage out(w, h);
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const int b = bins[i];
    if (b == 0) out[i] = 0.0;
    else if (b == kBins - 1 || span <= 0) out[i] = 1.0;
    else out[i] = std::clamp((cdf[b] - base) / span, 0.0, 1.0);
  }
  return out;
}

GrayImage linear_rescale(const RawThermalImage& raw) {
  GrayImage out(raw.values.width(), raw.values.height());
  const double mx = raw.max_count();
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    out[i] = std::clamp(raw.values[i] / mx, 0.0, 1.0);
  }
  return out;
}

EnhanceMethod parse_enhance_method(const std::string& name) {
  if (name == "fieldscale") return EnhanceMethod::kFieldScale;
  if (name == "naive") return EnhanceMethod::kNaive;
  if (name == "none") return EnhanceMethod::kNone;
  throw ConfigError("unknown enhancement method '" + name + "' (fieldscale, naive, none)");
}

std::string to_string(EnhanceMethod method) {
  switch (method) {
    case EnhanceMethod::kFieldScale: return "fieldscale";
    case EnhanceMethod::kNaive: return "naive";
    case EnhanceMethod::kNone: return "none";
  }
  return "none";
}

GrayImage enhance(const RawThermalImage& raw, EnhanceMethod method,
                  const FieldScaleOptions& options) {
  switch (method) {
    case EnhanceMethod::kFieldScale: return fieldscale(raw, options);
    case EnhanceMethod::kNaive: return naive_rescale(raw);
    case EnhanceMethod::kNone: return linear_rescale(raw);
  }
  return linear_rescale(raw);
}

}  // namespace thermap
