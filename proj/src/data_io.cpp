#include "poseforge/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "poseforge/backbone.hpp"
#include "poseforge/errors.hpp"

namespace poseforge {
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool parse_double(const std::string& s, double& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::string padded_index(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

// ---- pose files ------------------------------------------------------------

std::vector<Pose> parse_pose_text(const std::string& text, const std::string& origin) {
  std::vector<Pose> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream tokens(line);
    std::vector<std::string> parts;
    for (std::string tok; tokens >> tok;) parts.push_back(tok);
    if (parts.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (parts.size() != 7) {
      throw DataError(where + ": expected 7 values (tx ty tz qx qy qz qw), found " + std::to_string(parts.size()));
    }
    double v[7];
    for (std::size_t i = 0; i < 7; ++i) {
      if (!parse_double(parts[i], v[i]) || !std::isfinite(v[i])) {
        throw DataError(where + ": '" + parts[i] + "' is not a number");
      }
    }
    Pose p;
    p.translation = Eigen::Vector3d(v[0], v[1], v[2]);
    try {
      p.rotation = sanitize_quaternion(Eigen::Quaterniond(v[6], v[3], v[4], v[5]));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(p);
  }
  return out;
}

std::vector<Pose> parse_pose_file(const fs::path& path) { return parse_pose_text(read_text(path), path.string()); }

std::string format_pose(const Pose& pose) {
  char buf[256];
  const auto& t = pose.translation;
  const auto& q = pose.rotation;
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g", t.x(), t.y(), t.z(), q.x(), q.y(),
                q.z(), q.w());
  return buf;
}

void write_pose_file(const fs::path& path, const std::vector<Pose>& poses) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : poses) out << format_pose(p) << '\n';
}

// ---- netpbm ----------------------------------------------------------------

Raster read_netpbm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image " + path.string());
  auto token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(in, rest);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) return tok;
      } else {
        tok += c;
      }
    }
    return tok;
  };
  const std::string magic = token();
  Raster r;
  bool binary = false;
  if (magic == "P6" || magic == "P3") r.channels = 3;
  else if (magic == "P5" || magic == "P2") r.channels = 1;
  else throw DataError(path.string() + " is not a PPM/PGM image");
  binary = magic == "P6" || magic == "P5";
  try {
    r.width = std::stoul(token());
    r.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw DataError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed header");
  }
  r.pixels.resize(r.width * r.height * r.channels);
  if (binary) {
    in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
      throw DataError(path.string() + ": truncated pixel data");
    }
  } else {
    for (auto& p : r.pixels) {
      const std::string tok = token();
      if (tok.empty()) throw DataError(path.string() + ": truncated pixel data");
      const int v = std::stoi(tok);
      if (v < 0 || v > 255) throw DataError(path.string() + ": pixel value out of range");
      p = static_cast<std::uint8_t>(v);
    }
  }
  return r;
}

void write_netpbm(const fs::path& path, const Raster& r, bool binary) {
  if (r.channels != 1 && r.channels != 3) throw DataError("netpbm output needs 1 or 3 channels");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const char* magic = r.channels == 3 ? (binary ? "P6" : "P3") : (binary ? "P5" : "P2");
  out << magic << '\n' << r.width << ' ' << r.height << "\n255\n";
  if (binary) {
    out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    return;
  }
  const std::size_t row = r.width * r.channels;
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    out << static_cast<int>(r.pixels[i]) << ((i + 1) % row == 0 ? '\n' : ' ');
  }
}

Raster to_raster(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("expected a [3,H,W] image, got " + to_string(image.shape()));
  Raster r{image.dim(2), image.dim(1), 3, {}};
  const std::size_t n = r.width * r.height;
  r.pixels.resize(n * 3);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * n + p], 0.0, 1.0);
      r.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return r;
}

Tensor from_raster(const Raster& r) {
  if (r.channels != 3) throw DataError("expected an RGB image");
  const std::size_t n = r.width * r.height;
  std::vector<double> v(3 * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * n + p] = r.pixels[p * 3 + c] / 255.0;
  return Tensor::from_data({3, r.height, r.width}, std::move(v));
}

// ---- manifest --------------------------------------------------------------

SceneManifest read_manifest(const fs::path& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto strip = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path.string() + ": manifest lacks mandatory key '" + key + "'");
    return it->second;
  };
  auto number = [&](const char* key) {
    double v = 0.0;
    if (!parse_double(need(key), v)) throw DataError(path.string() + ": '" + key + "' is not a number");
    return v;
  };
  SceneManifest m;
  if (kv.contains("name")) m.name = kv["name"];
  m.intrinsics.width = static_cast<std::size_t>(number("width"));
  m.intrinsics.height = static_cast<std::size_t>(number("height"));
  m.intrinsics.fx = number("fx");
  m.intrinsics.fy = number("fy");
  m.intrinsics.cx = number("cx");
  m.intrinsics.cy = number("cy");
  m.classes = static_cast<std::size_t>(number("classes"));
  m.views = static_cast<std::size_t>(number("views"));
  if (kv.contains("near")) m.near = number("near");
  if (kv.contains("far")) m.far = number("far");
  if (kv.contains("seed")) m.seed = static_cast<std::uint64_t>(number("seed"));
  try {
    m.intrinsics.validate();
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const SceneManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "name = %s\nwidth = %zu\nheight = %zu\nclasses = %zu\nviews = %zu\nnear = %.17g\nfar = %.17g\n"
                "fx = %.17g\nfy = %.17g\ncx = %.17g\ncy = %.17g\nseed = %llu\n",
                m.name.c_str(), m.intrinsics.width, m.intrinsics.height, m.classes, m.views, m.near, m.far,
                m.intrinsics.fx, m.intrinsics.fy, m.intrinsics.cx, m.intrinsics.cy,
                static_cast<unsigned long long>(m.seed));
  out << buf;
}

// ---- voxels ----------------------------------------------------------------

void VoxelGrid::fill(std::array<std::size_t, 3> from, std::array<std::size_t, 3> to, std::uint8_t id) {
  if (cells.empty()) cells.assign(resolution * resolution * resolution, 0);
  for (std::size_t z = from[2]; z < std::min(to[2], resolution); ++z)
    for (std::size_t y = from[1]; y < std::min(to[1], resolution); ++y)
      for (std::size_t x = from[0]; x < std::min(to[0], resolution); ++x) cells[(z * resolution + y) * resolution + x] = id;
}

VoxelHit march(const VoxelGrid& grid, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double near,
               double far) {
  VoxelHit miss;
  const double inf = std::numeric_limits<double>::infinity();
  double t0 = -inf, t1 = inf;
  int entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < grid.lo || origin[a] > grid.hi) return miss;
      continue;
    }
    double ta = (grid.lo - origin[a]) / dir[a];
    double tb = (grid.hi - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      entry_axis = a;
    }
    t1 = std::min(t1, tb);
  }
  double t = std::max(t0, near);
  if (t0 < near) entry_axis = -1;
  const double t_end = std::min(t1, far);
  if (t > t_end) return miss;

  const std::size_t n = grid.resolution;
  const double vs = grid.voxel_size();
  const Eigen::Vector3d p = origin + t * dir;
  std::array<long, 3> cell{};
  std::array<long, 3> step{};
  std::array<double, 3> t_max{}, t_delta{};
  for (int a = 0; a < 3; ++a) {
    cell[a] = std::clamp(static_cast<long>(std::floor((p[a] - grid.lo) / vs)), 0L, static_cast<long>(n) - 1);
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (grid.lo + static_cast<double>(cell[a] + 1) * vs - origin[a]) / dir[a];
      t_delta[a] = vs / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (grid.lo + static_cast<double>(cell[a]) * vs - origin[a]) / dir[a];
      t_delta[a] = -vs / dir[a];
    } else {
      t_max[a] = inf;
      t_delta[a] = inf;
    }
  }
  for (;;) {
    const auto x = static_cast<std::size_t>(cell[0]), y = static_cast<std::size_t>(cell[1]),
               z = static_cast<std::size_t>(cell[2]);
    if (const std::uint8_t id = grid.at(x, y, z); id != 0) {
      return VoxelHit{id, t, entry_axis, {x, y, z}};
    }
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    t = t_max[a];
    if (t > t_end) return miss;
    cell[a] += step[a];
    if (cell[a] < 0 || cell[a] >= static_cast<long>(n)) return miss;
    t_max[a] += t_delta[a];
    entry_axis = a;
  }
}

Sample render_voxels(const VoxelGrid& grid, const std::vector<std::array<double, 3>>& colors, const Camera& camera,
                     double near, double far) {
  const Intrinsics& k = camera.intrinsics;
  const std::size_t W = k.width, H = k.height, n = W * H;
  const RayBatch rays = generate_rays(camera, near, far, 1);
  Sample s;
  s.pose = camera.pose;
  s.width = s.valid_width = W;
  s.height = s.valid_height = H;
  s.labels.assign(n, 0);
  std::vector<double> img(3 * n, 0.0);
  static constexpr double kFaceShade[3] = {0.8, 0.65, 1.0};
  for (std::size_t p = 0; p < n; ++p) {
    const Eigen::Vector3d o(rays.origins[p * 3], rays.origins[p * 3 + 1], rays.origins[p * 3 + 2]);
    const Eigen::Vector3d d(rays.directions[p * 3], rays.directions[p * 3 + 1], rays.directions[p * 3 + 2]);
    const VoxelHit hit = march(grid, o, d, near, far);
    if (hit.label == 0) continue;
    s.labels[p] = hit.label;
    const double shade = (hit.axis >= 0 ? kFaceShade[hit.axis] : 1.0) *
                         ((hit.cell[0] + hit.cell[1] + hit.cell[2]) % 2 == 0 ? 1.0 : 0.82);
    for (std::size_t c = 0; c < 3; ++c) img[c * n + p] = colors[hit.label][c] * shade;
  }
  s.image = Tensor::from_data({3, H, W}, std::move(img));
  return s;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
  if (spec.classes < 2 || spec.classes > 255) throw ConfigError("class count must lie in [2, 255] (class 0 is empty space)");
  if (spec.views == 0) throw ConfigError("view count must be positive");
  check_input_resolution(spec.height, spec.width);

  Rng rng(spec.seed);
  SyntheticScene scene;
  VoxelGrid& g = scene.grid;
  g.resolution = 16;
  g.cells.assign(16 * 16 * 16, 0);
  g.fill({0, 0, 0}, {16, 16, 2}, 1);  // floor slab
  if (spec.classes == 2) {
    g.fill({6, 6, 2}, {10, 10, 8}, 1);
  }
  std::uniform_int_distribution<std::size_t> extent(2, 5), height(2, 7);
  for (std::size_t c = 2; c < spec.classes; ++c) {
    for (int box = 0; box < 2; ++box) {
      const std::size_t sx = extent(rng), sy = extent(rng), sz = height(rng);
      const std::size_t x0 = std::uniform_int_distribution<std::size_t>(1, 15 - sx)(rng);
      const std::size_t y0 = std::uniform_int_distribution<std::size_t>(1, 15 - sy)(rng);
      g.fill({x0, y0, 2}, {x0 + sx, y0 + sy, 2 + sz}, static_cast<std::uint8_t>(c));
    }
  }

  static constexpr std::array<double, 3> kPalette[] = {
      {0.0, 0.0, 0.0}, {0.55, 0.55, 0.5}, {0.85, 0.25, 0.2}, {0.2, 0.55, 0.85}, {0.3, 0.75, 0.3}, {0.9, 0.8, 0.2},
  };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (c < std::size(kPalette)) scene.colors.push_back(kPalette[c]);
    else scene.colors.push_back({0.2 + 0.8 * unit(rng), 0.2 + 0.8 * unit(rng), 0.2 + 0.8 * unit(rng)});
  }

  SceneManifest& m = scene.manifest;
  m.name = "synthetic-" + std::to_string(spec.seed);
  m.classes = spec.classes;
  m.views = spec.views;
  m.near = 0.5;
  m.far = 5.0;
  m.seed = spec.seed;
  m.intrinsics = Intrinsics{0.85 * static_cast<double>(spec.width), 0.85 * static_cast<double>(spec.width),
                            spec.width / 2.0, spec.height / 2.0, spec.width, spec.height};

  const double pi = std::numbers::pi;
  for (std::size_t v = 0; v < spec.views; ++v) {
    bool accepted = false;
    double best = 0.0;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      const double azimuth = 2.0 * pi * (static_cast<double>(v) + 0.6 * (unit(rng) - 0.5)) / spec.views;
      const double elevation = (35.0 + 15.0 * unit(rng)) * pi / 180.0;
      // Retries creep closer so tall or narrow frames still fill with geometry.
      const double radius = (2.0 + 0.3 * unit(rng)) * (1.0 - 0.005 * attempt);
      const Eigen::Vector3d eye(radius * std::cos(elevation) * std::cos(azimuth),
                                radius * std::cos(elevation) * std::sin(azimuth), radius * std::sin(elevation));
      const Eigen::Vector3d target(0.2 * (unit(rng) - 0.5), 0.2 * (unit(rng) - 0.5), -0.7 + 0.2 * (unit(rng) - 0.5));
      Camera cam{m.intrinsics, Pose{eye, look_at(eye, target, Eigen::Vector3d::UnitZ())}};
      Sample s = render_voxels(g, scene.colors, cam, m.near, m.far);
      const auto hits = static_cast<double>(std::count_if(s.labels.begin(), s.labels.end(), [](std::size_t l) { return l != 0; }));
      best = std::max(best, hits / static_cast<double>(s.labels.size()));
      if (hits >= 0.5 * static_cast<double>(s.labels.size())) {
        scene.samples.push_back(std::move(s));
        accepted = true;
      }
    }
    if (!accepted) {
      throw DataError("view " + std::to_string(v) + " never reached a 50% hit fraction in 100 attempts (best " +
                      std::to_string(best) + ")");
    }
  }
  return scene;
}

void write_dataset(const fs::path& dir, const SyntheticScene& scene) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  write_manifest(dir / "manifest.txt", scene.manifest);
  std::vector<Pose> poses;
  for (std::size_t i = 0; i < scene.samples.size(); ++i) {
    const Sample& s = scene.samples[i];
    poses.push_back(s.pose);
    write_netpbm(dir / "images" / (padded_index(i) + ".ppm"), to_raster(s.image));
    Raster lab{s.width, s.height, 1, {}};
    lab.pixels.reserve(s.labels.size());
    for (const auto l : s.labels) lab.pixels.push_back(static_cast<std::uint8_t>(l));
    write_netpbm(dir / "labels" / (padded_index(i) + ".pgm"), lab);
  }
  write_pose_file(dir / "poses.txt", poses);
}

// ---- datasets --------------------------------------------------------------

namespace {

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t round_up32(std::size_t v) { return (v + 31) / 32 * 32; }

}  // namespace

Dataset load_dataset(const fs::path& root, const LoadOptions& opts) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  Dataset ds;
  ds.manifest = read_manifest(root / "manifest.txt");
  const auto poses = parse_pose_file(root / "poses.txt");
  const auto images = list_files(root / "images", ".ppm");
  const auto labels = list_files(root / "labels", ".pgm");
  if (images.size() != poses.size()) {
    throw DataError(root.string() + ": found " + std::to_string(images.size()) + " images but " +
                    std::to_string(poses.size()) + " poses");
  }
  if (!labels.empty() && labels.size() != images.size()) {
    throw DataError(root.string() + ": found " + std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " label maps");
  }
  if (images.empty()) throw DataError(root.string() + " holds no images");

  Intrinsics k = ds.manifest.intrinsics;
  const std::size_t W0 = k.width, H0 = k.height;
  const std::size_t W = opts.resize_width ? opts.resize_width : W0;
  const std::size_t H = opts.resize_height ? opts.resize_height : H0;
  const double sx = static_cast<double>(W) / static_cast<double>(W0);
  const double sy = static_cast<double>(H) / static_cast<double>(H0);
  k.fx *= sx;
  k.fy *= sy;
  k.cx = (k.cx + 0.5) * sx - 0.5;
  k.cy = (k.cy + 0.5) * sy - 0.5;
  const std::size_t Wp = round_up32(W), Hp = round_up32(H);
  k.width = Wp;
  k.height = Hp;
  ds.intrinsics = k;

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Raster r = read_netpbm(images[i]);
    if (r.width != W0 || r.height != H0) {
      throw DataError(images[i].string() + " is " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                      ", manifest says " + std::to_string(W0) + "x" + std::to_string(H0));
    }
    Tensor img = from_raster(r);
    if (W != W0 || H != H0) img = bilinear_resize(img, H, W);
    std::vector<double> padded(3 * Hp * Wp, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) padded[(c * Hp + y) * Wp + x] = img[(c * H + y) * W + x];

    Sample s;
    s.image = Tensor::from_data({3, Hp, Wp}, std::move(padded));
    s.pose = poses[i];
    s.width = Wp;
    s.height = Hp;
    s.valid_width = W;
    s.valid_height = H;
    if (!labels.empty()) {
      const Raster lab = read_netpbm(labels[i]);
      if (lab.channels != 1 || lab.width != W0 || lab.height != H0) {
        throw DataError(labels[i].string() + " does not match its image size");
      }
      s.labels.assign(Hp * Wp, 0);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const auto ys = std::min(H0 - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) / sy));
          const auto xs = std::min(W0 - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) / sx));
          const std::size_t l = lab.pixels[ys * W0 + xs];
          if (l >= ds.manifest.classes) {
            throw DataError(labels[i].string() + ": label " + std::to_string(l) + " at (x=" + std::to_string(xs) +
                            ", y=" + std::to_string(ys) + ") exceeds the manifest class count");
          }
          s.labels[y * Wp + x] = l;
        }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DatasetSplit split_dataset(const Dataset& data, double val_ratio, std::uint64_t seed) {
  if (!(val_ratio >= 0.0 && val_ratio < 1.0)) throw ConfigError("validation ratio must lie in [0, 1)");
  const std::size_t n = data.samples.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_ratio));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplit out;
  out.val_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train_index.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(out.val_index.begin(), out.val_index.end());
  std::sort(out.train_index.begin(), out.train_index.end());
  out.train.manifest = out.val.manifest = data.manifest;
  out.train.intrinsics = out.val.intrinsics = data.intrinsics;
  for (const auto i : out.train_index) out.train.samples.push_back(data.samples[i]);
  for (const auto i : out.val_index) out.val.samples.push_back(data.samples[i]);
  return out;
}

Tensor stack_images(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw DataError("empty image batch");
  const Shape s = batch.front()->image.shape();
  std::vector<double> v;
  v.reserve(batch.size() * numel(s));
  for (const Sample* b : batch) {
    if (b->image.shape() != s) {
      throw DimensionError("batch mixes image shapes " + to_string(s) + " and " + to_string(b->image.shape()));
    }
    v.insert(v.end(), b->image.values().begin(), b->image.values().end());
  }
  return Tensor::from_data({batch.size(), s[0], s[1], s[2]}, std::move(v));
}

}  // namespace poseforge
