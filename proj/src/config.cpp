#include "thermap/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "thermap/errors.hpp"

namespace thermap {

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& v);

template <>
double parse_value<double>(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad number for '" + key + "': " + v);
  return out;
}

template <>
int parse_value<int>(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer for '" + key + "': " + v);
  return out;
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad seed for '" + key + "': " + v);
  return out;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for '" + key + "': " + v);
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& v) {
  return v;
}

std::string format_value(double v) {
  char buf[40];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Entry field(const char* name, const char* help, Access access) {
  return {{name, help},
          [access, name](RunConfig& c, const std::string& v) { access(c) = parse_value<T>(name, v); },
          [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); }};
}

#define THERMAP_FIELD(type, name, help, expr) \
  field<type>(name, help, [](RunConfig& c) -> type& { return expr; })

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t = {
        THERMAP_FIELD(double, "tau", "keyframe mean-flow threshold, depth-grid pixels", c.graph.flow_threshold),
        THERMAP_FIELD(int, "max_edge_age", "edge age (keyframe insertions) before pruning", c.graph.max_edge_age),
        THERMAP_FIELD(int, "edge_radius", "temporal radius of keyframe edges", c.graph.edge_radius),
        THERMAP_FIELD(int, "connect_keyframes", "keyframes linked to a tracked frame", c.tracker.connect_keyframes),
        THERMAP_FIELD(int, "tracking_steps", "pose-only DBA steps per tracked frame", c.tracker.micro_steps),
        THERMAP_FIELD(double, "lambda_init", "initial LM damping", c.tracker.lm.lambda_init),
        THERMAP_FIELD(int, "rounds", "DBA/DSO alternation rounds per keyframe", c.alternation.rounds),
        THERMAP_FIELD(int, "dba_steps", "max DBA steps per round", c.alternation.dba_steps),
        THERMAP_FIELD(int, "dso_steps", "max DSO steps per round", c.alternation.dso_steps),
        THERMAP_FIELD(double, "eta", "low-error threshold as a fraction of mean depth", c.alternation.eta),
        THERMAP_FIELD(double, "alpha1", "prior weight on high-error pixels", c.alternation.weights.alpha1),
        THERMAP_FIELD(double, "alpha2", "prior weight on low-error pixels", c.alternation.weights.alpha2),
        THERMAP_FIELD(int, "ba_window", "most recent keyframes optimized after insertion", c.ba_window),
        THERMAP_FIELD(int, "final_ba_steps", "global DBA steps after the sequence", c.final_ba_steps),
        THERMAP_FIELD(int, "filler_steps", "pose-only steps re-placing non-keyframes at the end (0 = off)",
                      c.filler_steps),
        THERMAP_FIELD(int, "max_tracking_failures", "dropped frames tolerated before exit code 2",
                      c.max_tracking_failures),
        THERMAP_FIELD(std::string, "oracle_dir", "directory for the file oracle", c.oracle_dir),
        THERMAP_FIELD(double, "flow_sigma", "synthetic flow noise, depth-grid pixels", c.flow_sigma),
        THERMAP_FIELD(double, "mono_theta", "synthetic prior scale", c.mono_theta),
        THERMAP_FIELD(double, "mono_gamma", "synthetic prior shift", c.mono_gamma),
        THERMAP_FIELD(double, "mono_sigma", "synthetic prior noise on inverse depth", c.mono_sigma),
        THERMAP_FIELD(int, "fieldscale_grid_x", "FieldScale cells across", c.fieldscale.grid_x),
        THERMAP_FIELD(int, "fieldscale_grid_y", "FieldScale cells down", c.fieldscale.grid_y),
        THERMAP_FIELD(double, "fieldscale_low_pct", "FieldScale lower percentile", c.fieldscale.percentile_low),
        THERMAP_FIELD(double, "fieldscale_high_pct", "FieldScale upper percentile", c.fieldscale.percentile_high),
        THERMAP_FIELD(int, "fieldscale_passes", "FieldScale smoothing passes", c.fieldscale.smoothing_passes),
        THERMAP_FIELD(double, "loss_alpha", "SSIM share of the photometric loss", c.mapper.loss.alpha),
        THERMAP_FIELD(double, "loss_beta", "depth loss weight", c.mapper.loss.beta),
        THERMAP_FIELD(double, "lr_position", "position learning rate, times scene extent", c.mapper.lr.position),
        THERMAP_FIELD(double, "lr_scale", "log-scale learning rate", c.mapper.lr.scale),
        THERMAP_FIELD(double, "lr_rotation", "rotation learning rate", c.mapper.lr.rotation),
        THERMAP_FIELD(double, "lr_opacity", "opacity-logit learning rate", c.mapper.lr.opacity),
        THERMAP_FIELD(double, "lr_color", "color learning rate", c.mapper.lr.color),
        THERMAP_FIELD(bool, "densify", "enable densification and pruning", c.mapper.densify_enabled),
        THERMAP_FIELD(double, "grad_threshold", "AbsGS gradient threshold (NDC)", c.mapper.densify.grad_threshold),
        THERMAP_FIELD(double, "split_scale", "clone/split scale, fraction of scene extent",
                      c.mapper.densify.scale_split_threshold),
        THERMAP_FIELD(double, "split_factor", "scale divisor for split children", c.mapper.densify.split_factor),
        THERMAP_FIELD(double, "opacity_prune", "prune below this opacity", c.mapper.densify.opacity_prune),
        THERMAP_FIELD(int, "min_observations", "keyframes that must observe a new Gaussian",
                      c.mapper.densify.min_observations),
        THERMAP_FIELD(int, "densify_interval", "mapping iterations between densification",
                      c.mapper.densify.interval),
        THERMAP_FIELD(double, "extent_prune", "faint-Gaussian size limit, fraction of scene extent",
                      c.mapper.densify.extent_prune_scale),
        THERMAP_FIELD(int, "spawn_stride", "pixel stride when spawning Gaussians", c.spawn_stride),
        THERMAP_FIELD(int, "map_iterations", "mapping iterations per keyframe", c.map_iterations_per_kf),
        THERMAP_FIELD(int, "map_window", "recent mapping keyframes visited per insertion", c.map_window),
        THERMAP_FIELD(int, "final_iterations", "refinement iterations over all mapping keyframes",
                      c.final_iterations),
        THERMAP_FIELD(double, "window_overlap", "keyframes overlapping the map window less than this join it",
                      c.window_overlap),
        THERMAP_FIELD(int, "eval_every", "held-out evaluation view stride", c.eval_every),
        THERMAP_FIELD(bool, "write_renders", "write rendered evaluation views", c.write_renders),
        THERMAP_FIELD(std::uint64_t, "seed", "global seed", c.seed),
        THERMAP_FIELD(bool, "deterministic", "serial, bit-reproducible execution", c.deterministic),
    };
    t.push_back({{"oracle", "synthetic or file"},
                 [](RunConfig& c, const std::string& v) {
                   if (v == "synthetic") {
                     c.oracle = OracleMode::kSynthetic;
                   } else if (v == "file") {
                     c.oracle = OracleMode::kFile;
                   } else {
                     throw ConfigError("bad value for 'oracle': " + v + " (synthetic, file)");
                   }
                 },
                 [](const RunConfig& c) { return std::string(c.oracle == OracleMode::kFile ? "file" : "synthetic"); }});
    t.push_back({{"enhance", "fieldscale, naive or none"},
                 [](RunConfig& c, const std::string& v) { c.enhance = parse_enhance_method(v); },
                 [](const RunConfig& c) { return to_string(c.enhance); }});
    return t;
  }();
  return table;
}

#undef THERMAP_FIELD

const Entry& find(const std::string& key) {
  for (const Entry& e : entries()) {
    if (key == e.key.name) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const Entry& e : entries()) os << e.key.name << " = " << e.get(*this) << "\n";
  return os.str();
}

const std::vector<ConfigKey>& describe_config() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Entry& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

}  // namespace thermap
