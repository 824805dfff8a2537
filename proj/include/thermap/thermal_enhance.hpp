#pragma once

#include <cstdint>
#include <string>

#include "thermap/grid.hpp"

namespace thermap {

/// Grayscale intensities in [0, 1].
using GrayImage = Grid<double>;

/// Raw radiometric counts as delivered by the sensor (8, 14 or 16 bit).
struct RawThermalImage {
  Grid<std::uint16_t> values;
  int bit_depth = 16;

  /// Throws ContractViolation if any count does not fit in `bit_depth` bits.
  void validate() const;
  double max_count() const { return static_cast<double>((1u << bit_depth) - 1); }
};

struct FieldScaleOptions {
  int grid_x = 8;
  int grid_y = 8;
  double percentile_low = 1.0;
  double percentile_high = 99.0;
  int smoothing_passes = 10;
};

/// Locality-aware rescaling: per-cell robust min/max fields, smoothed and
/// bilinearly interpolated, then a per-pixel clamped linear map to [0, 1].
GrayImage fieldscale(const RawThermalImage& raw, const FieldScaleOptions& options = {});

/// Baseline: global percentile rescale followed by 256-bin histogram equalization.
GrayImage naive_rescale(const RawThermalImage& raw);

/// Plain division by the full-scale count. Used when no enhancement is requested.
GrayImage linear_rescale(const RawThermalImage& raw);

enum class EnhanceMethod { kFieldScale, kNaive, kNone };

EnhanceMethod parse_enhance_method(const std::string& name);
std::string to_string(EnhanceMethod method);
GrayImage enhance(const RawThermalImage& raw, EnhanceMethod method,
                  const FieldScaleOptions& options = {});

/// Linear-interpolated percentile (0..100) of a sample set; sorts a copy.
double percentile(std::vector<double> values, double pct);

}  // namespace thermap
