#include "thermap/dataset_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "thermap/errors.hpp"

namespace thermap {

// ---------------------------------------------------------------------------
// Trajectories

void validate_trajectory(const Trajectory& traj) {
  for (std::size_t k = 1; k < traj.size(); ++k) {
    if (!(traj[k].timestamp > traj[k - 1].timestamp)) {
      throw ContractViolation("trajectory timestamps must be strictly increasing");
    }
  }
}

std::string format_tum_line(const TimedPose& p) {
  const Quat& q = p.pose.rotation;
  const Vec3& t = p.pose.translation;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", p.timestamp);
  std::string s(buf);
  // Shortest representation that reads back to the same double.
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
    if (v == 0) v = 0;  // drop the sign of negative zero
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    s += ' ';
    s.append(buf, res.ptr);
  }
  return s;
}

void write_tum_trajectory(const Trajectory& traj, const fs::path& path) {
  validate_trajectory(traj);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : traj) out << format_tum_line(p) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Trajectory read_tum_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    int n = 0;
    std::string tok;
    while (ss >> tok) {
      if (n == 8) throw ParseError(path.string(), ParseError::Unit::kLine, lineno, "more than 8 fields");
      char* end = nullptr;
      v[n] = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0' || !std::isfinite(v[n])) {
        throw ParseError(path.string(), ParseError::Unit::kLine, lineno, "bad number '" + tok + "'");
      }
      ++n;
    }
    if (n != 8) {
      throw ParseError(path.string(), ParseError::Unit::kLine, lineno,
                       "expected 8 fields, found " + std::to_string(n));
    }
    Quat q(v[7], v[4], v[5], v[6]);
    if (q.norm() < 1e-6) throw ParseError(path.string(), ParseError::Unit::kLine, lineno, "zero quaternion");
    if (!traj.empty() && !(v[0] > traj.back().timestamp)) {
      throw ParseError(path.string(), ParseError::Unit::kLine, lineno, "non-increasing timestamp");
    }
    traj.push_back({v[0], SE3Pose(q.normalized(), Vec3(v[1], v[2], v[3]))});
  }
  return traj;
}

// ---------------------------------------------------------------------------
// PFM

namespace {

class ByteReader {
 public:
  ByteReader(std::string source, std::string bytes) : source_(std::move(source)), bytes_(std::move(bytes)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_, ParseError::Unit::kByte, pos_, what);
  }

  std::string token() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail("unexpected end of header");
    return bytes_.substr(start, pos_ - start);
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("expected whitespace after header");
    }
    ++pos_;
  }

  std::string line() {
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string::npos) fail("unterminated header line");
    std::string out = bytes_.substr(pos_, end - pos_);
    if (!out.empty() && out.back() == '\r') out.pop_back();
    pos_ = end + 1;
    return out;
  }

  void skip(std::size_t n) { pos_ += n; }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const char* here() const { return bytes_.data() + pos_; }

 private:
  std::string source_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int parse_positive_int(ByteReader& r, const char* what) {
  const std::size_t at = r.pos();
  const std::string tok = r.token();
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (*end != '\0' || v <= 0 || v > (1 << 20)) {
    throw ParseError("pfm", ParseError::Unit::kByte, at, std::string("bad ") + what + " '" + tok + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

PfmImage pfm_read(const fs::path& path) {
  ByteReader r(path.string(), read_file(path));
  const std::string magic = r.token();
  PfmImage img;
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw ParseError(path.string(), ParseError::Unit::kByte, 0, "bad magic '" + magic + "'");
  }
  try {
    img.width = parse_positive_int(r, "width");
    img.height = parse_positive_int(r, "height");
  } catch (const ParseError& e) {
    throw ParseError(path.string(), ParseError::Unit::kByte, e.position(), "bad dimensions");
  }
  const std::size_t scale_at = r.pos();
  const std::string scale_tok = r.token();
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (*end != '\0' || scale == 0.0 || !std::isfinite(scale)) {
    throw ParseError(path.string(), ParseError::Unit::kByte, scale_at, "bad scale '" + scale_tok + "'");
  }
  if (scale > 0) {
    throw ParseError(path.string(), ParseError::Unit::kByte, scale_at,
                     "big-endian PFM (positive scale) is not supported");
  }
  r.single_whitespace();
  const std::size_t count = std::size_t(img.width) * img.height * img.channels;
  if (r.remaining() != count * sizeof(float)) {
    r.fail("expected " + std::to_string(count * sizeof(float)) + " data bytes, found " +
           std::to_string(r.remaining()));
  }
  img.data.resize(count);
  const std::size_t row = std::size_t(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) {
    // File rows run bottom-up.
    const char* src = r.here() + std::size_t(img.height - 1 - y) * row * sizeof(float);
    std::memcpy(img.data.data() + std::size_t(y) * row, src, row * sizeof(float));
  }
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  return img;
}

void pfm_write(const PfmImage& image, const fs::path& path) {
  if (image.channels != 1 && image.channels != 3) throw ContractViolation("pfm_write: 1 or 3 channels");
  if (image.data.size() != std::size_t(image.width) * image.height * image.channels) {
    throw ContractViolation("pfm_write: data size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (image.channels == 1 ? "Pf" : "PF") << '\n'
      << image.width << ' ' << image.height << '\n'
      << "-1.0\n";
  const std::size_t row = std::size_t(image.width) * image.channels;
  for (int y = image.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(image.data.data() + std::size_t(y) * row),
              std::streamsize(row * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

PfmImage to_pfm(const Grid<double>& g) {
  PfmImage p{g.width(), g.height(), 1, std::vector<float>(g.size())};
  for (std::size_t i = 0; i < g.size(); ++i) p.data[i] = static_cast<float>(g[i]);
  return p;
}

Grid<double> from_pfm(const PfmImage& p, int channel) {
  Grid<double> g(p.width, p.height);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) g(x, y) = p.at(x, y, channel);
  }
  return g;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const fs::path& path, int width, int height, int bit_depth,
               const std::vector<png_byte>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = std::size_t(width) * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + std::size_t(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

RawThermalImage png_read_raw(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png decode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const int out_depth = depth == 16 ? 16 : 8;
  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<png_byte> bytes(stride * height);
  for (int y = 0; y < height; ++y) png_read_row(png, bytes.data() + std::size_t(y) * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  RawThermalImage raw{Grid<std::uint16_t>(width, height), out_depth};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (out_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, bytes.data() + std::size_t(y) * stride + 2 * std::size_t(x), 2);
        raw.values(x, y) = v;
      } else {
        raw.values(x, y) = bytes[std::size_t(y) * stride + x];
      }
    }
  }
  return raw;
}

void png_write_gray8(const GrayImage& image, const fs::path& path) {
  std::vector<png_byte> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<png_byte>(std::lround(255.0 * std::clamp(image[i], 0.0, 1.0)));
  }
  write_png(path, image.width(), image.height(), 8, bytes);
}

void png_write_raw16(const Grid<std::uint16_t>& values, const fs::path& path) {
  std::vector<png_byte> bytes(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    bytes[2 * i] = static_cast<png_byte>(values[i] >> 8);  // PNG is big-endian
    bytes[2 * i + 1] = static_cast<png_byte>(values[i] & 0xff);
  }
  write_png(path, values.width(), values.height(), 16, bytes);
}

void png_write_raw8(const Grid<std::uint16_t>& values, const fs::path& path) {
  std::vector<png_byte> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > 255) throw ContractViolation("png_write_raw8: value exceeds 8 bits");
    bytes[i] = static_cast<png_byte>(values[i]);
  }
  write_png(path, values.width(), values.height(), 8, bytes);
}

// ---------------------------------------------------------------------------
// Sequences

bool SequenceManifest::has_groundtruth() const {
  if (frames.empty()) return false;
  for (const auto& f : frames) {
    if (!f.gt_pose) return false;
  }
  return true;
}

Trajectory SequenceManifest::groundtruth() const {
  Trajectory t;
  for (const auto& f : frames) {
    if (f.gt_pose) t.push_back({f.timestamp, *f.gt_pose});
  }
  return t;
}

SequenceManifest load_sequence(const fs::path& dir) {
  SequenceManifest m;
  m.root = fs::absolute(dir);
  m.name = m.root.filename().string();
  if (m.name.empty()) m.name = m.root.parent_path().filename().string();

  const fs::path calib = dir / "calib.txt";
  {
    std::ifstream in(calib);
    if (!in) throw IoError("missing calibration file " + calib.string());
    PinholeIntrinsics& k = m.intrinsics;
    if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height >> m.bit_depth)) {
      throw ParseError(calib.string(), ParseError::Unit::kLine, 1,
                       "expected 'fx fy cx cy width height bit_depth'");
    }
    try {
      k.validate();
    } catch (const ContractViolation& e) {
      throw ParseError(calib.string(), ParseError::Unit::kLine, 1, e.what());
    }
    if (m.bit_depth != 8 && m.bit_depth != 14 && m.bit_depth != 16) {
      throw ParseError(calib.string(), ParseError::Unit::kLine, 1, "bit depth must be 8, 14 or 16");
    }
  }

  const fs::path frames = dir / "frames.txt";
  std::ifstream in(frames);
  if (!in) throw IoError("missing frame list " + frames.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    FrameRecord rec;
    std::string rel;
    if (!(ss >> rec.timestamp >> rel)) {
      throw ParseError(frames.string(), ParseError::Unit::kLine, lineno, "expected 'timestamp path'");
    }
    if (!m.frames.empty() && !(rec.timestamp > m.frames.back().timestamp)) {
      throw ParseError(frames.string(), ParseError::Unit::kLine, lineno,
                       "timestamps must be strictly increasing");
    }
    rec.image_path = m.root / rel;
    if (!fs::exists(rec.image_path)) throw IoError("missing frame file " + rec.image_path.string());
    const fs::path depth = m.root / "gt" / ("depth_" + std::to_string(m.frames.size()) + ".pfm");
    if (fs::exists(depth)) rec.gt_depth_path = depth;
    m.frames.push_back(rec);
  }

  const fs::path gt_path = dir / "groundtruth.txt";
  if (fs::exists(gt_path)) {
    const Trajectory gt = read_tum_trajectory(gt_path);
    std::size_t k = 0;
    for (auto& f : m.frames) {
      while (k < gt.size() && gt[k].timestamp < f.timestamp - 1e-6) ++k;
      if (k < gt.size() && std::abs(gt[k].timestamp - f.timestamp) <= 1e-6) f.gt_pose = gt[k].pose;
    }
  }
  return m;
}

namespace {

const char* const kPlyProperties[] = {"x",       "y",       "z",       "scale_0", "scale_1",
                                      "scale_2", "rot_0",   "rot_1",   "rot_2",   "rot_3",
                                      "opacity", "gray"};
constexpr int kPlyFloats = 12;

}  // namespace

void ply_write(const std::vector<Gaussian3D>& gaussians, const fs::path& path) {
  std::ostringstream os;
  os << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << "\n";
  for (const char* p : kPlyProperties) os << "property float " << p << "\n";
  os << "end_header\n";
  std::string bytes = os.str();
  const std::size_t header = bytes.size();
  bytes.resize(header + gaussians.size() * kPlyFloats * sizeof(float));
  char* out = bytes.data() + header;
  for (const Gaussian3D& g : gaussians) {
    const float v[kPlyFloats] = {float(g.mu.x()),        float(g.mu.y()),        float(g.mu.z()),
                                 float(g.log_scale.x()), float(g.log_scale.y()), float(g.log_scale.z()),
                                 float(g.rotation.w()),  float(g.rotation.x()),  float(g.rotation.y()),
                                 float(g.rotation.z()),  float(g.opacity_logit), float(g.color)};
    for (float f : v) {
      std::uint32_t u = std::bit_cast<std::uint32_t>(f);
      std::memcpy(out, &u, sizeof u);
      out += sizeof u;
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

void ply_write(const GaussianMap& map, const fs::path& path) { ply_write(map.gaussians, path); }

std::vector<Gaussian3D> ply_read(const fs::path& path) {
  ByteReader r(path.string(), read_file(path));
  if (r.line() != "ply") r.fail("bad magic, expected 'ply'");
  if (r.line() != "format binary_little_endian 1.0") r.fail("unsupported PLY format");
  long count = -1;
  int prop = 0;
  for (;;) {
    const std::size_t at = r.pos();
    const std::string l = r.line();
    if (l == "end_header") break;
    std::istringstream is(l);
    std::string kw;
    is >> kw;
    if (kw == "comment") continue;
    if (kw == "element") {
      std::string name;
      is >> name >> count;
      if (name != "vertex" || !is || count < 0 || prop != 0) {
        throw ParseError(path.string(), ParseError::Unit::kByte, at, "bad element line");
      }
    } else if (kw == "property") {
      std::string type, name;
      is >> type >> name;
      if (count < 0 || prop >= kPlyFloats || type != "float" || name != kPlyProperties[prop]) {
        throw ParseError(path.string(), ParseError::Unit::kByte, at, "unexpected property '" + l + "'");
      }
      ++prop;
    } else {
      throw ParseError(path.string(), ParseError::Unit::kByte, at, "unknown header keyword '" + kw + "'");
    }
  }
  if (count < 0 || prop != kPlyFloats) r.fail("incomplete vertex declaration");
  const std::size_t need = static_cast<std::size_t>(count) * kPlyFloats * sizeof(float);
  if (r.remaining() != need) {
    r.fail("vertex data has " + std::to_string(r.remaining()) + " bytes, expected " + std::to_string(need));
  }
  std::vector<Gaussian3D> out(static_cast<std::size_t>(count));
  for (Gaussian3D& g : out) {
    float v[kPlyFloats];
    for (float& f : v) {
      std::uint32_t u;
      std::memcpy(&u, r.here(), sizeof u);
      f = std::bit_cast<float>(u);
      r.skip(sizeof u);
    }
    g.mu = Vec3(v[0], v[1], v[2]);
    g.log_scale = Vec3(v[3], v[4], v[5]);
    const Quat q(v[6], v[7], v[8], v[9]);
    g.rotation = q.norm() > 0 ? q.normalized() : Quat::Identity();
    g.opacity_logit = v[10];
    g.color = v[11];
  }
  return out;
}

}  // namespace thermap
