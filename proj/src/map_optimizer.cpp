#include "thermap/map_optimizer.hpp"

#include <cmath>

#include "thermap/errors.hpp"
#include "thermap/oracles.hpp"

namespace thermap {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-15;

}  // namespace

MapOptimizer::MapOptimizer(PinholeIntrinsics intr, MapperOptions options)
    : intr_(intr), options_(options) {}

void MapOptimizer::adam_update(GaussianMap& map, const GradientBundle& g, double extent) {
  GaussianParams lr;
  lr.segment<3>(kPosition).setConstant(options_.lr.position * extent);
  lr.segment<3>(kLogScale).setConstant(options_.lr.scale);
  lr.segment<4>(kRotation).setConstant(options_.lr.rotation);
  lr(kOpacity) = options_.lr.opacity;
  lr(kColor) = options_.lr.color;
  const double t = static_cast<double>(iteration_);
  const double c1 = 1 - std::pow(kBeta1, t);
  const double c2 = 1 - std::pow(kBeta2, t);
  for (std::size_t k = 0; k < map.size(); ++k) {
    GaussianParams& m = map.adam_m[k];
    GaussianParams& v = map.adam_v[k];
    m = kBeta1 * m + (1 - kBeta1) * g.grads[k];
    v = kBeta2 * v + (1 - kBeta2) * g.grads[k].cwiseAbs2();
    const GaussianParams step =
        lr.cwiseProduct((m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + kEps).matrix()));
    Gaussian3D& gs = map.gaussians[k];
    gs.set_params(gs.params() - step);
    gs.color = std::clamp(gs.color, 0.0, 1.0);
  }
  ++map.version;
}

std::vector<double> MapOptimizer::optimize(GaussianMap& map, std::span<const TrainView> views,
                                           int iterations, double extent, int current_kf_id) {
  if (iterations > 0 && views.empty()) throw ContractViolation("optimize_map: empty keyframe window");
  if (!(extent > 0)) throw ContractViolation("optimize_map: scene extent must be positive");
  std::vector<double> trace;
  for (int it = 0; it < iterations; ++it) {
    const TrainView& view = views[next_view_++ % views.size()];
    ++iteration_;
    if (map.empty()) {
      trace.push_back(0.0);
      continue;
    }
    const RenderOutput out = render(map, view.pose, intr_);
    const LossResult l = loss(out, *view.image, *view.proxy_inv_depth, options_.loss);
    trace.push_back(l.terms.total);
    const GradientBundle g = backward(out, map, view.pose, intr_, l.d_intensity, l.d_depth);
    accumulate_stats(map, g, intr_);
    adam_update(map, g, extent);

    if (options_.densify_enabled && options_.densify.interval > 0 && iteration_ % options_.densify.interval == 0) {
      DensifyConfig cfg = options_.densify;
      cfg.scale_split_threshold *= extent;
      cfg.extent_prune_scale *= extent;
      densify(map, cfg, mix_seed(options_.seed, static_cast<std::uint64_t>(iteration_)));
      prune(map, cfg, current_kf_id);
    }
  }
  return trace;
}

}  // namespace thermap
