#include "vlm3d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vlm3d/rng.hpp"
#include "vlm3d/threading.hpp"

namespace vlm3d {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

SceneGrid SceneGrid::make(Resolution res, const Aabb& bounds,
                          double raw_density_fill, double raw_color_fill) {
  if (res.x < 1 || res.y < 1 || res.z < 1)
    throw std::invalid_argument("scene resolution must be >= 1 per axis");
  if (!(bounds.lo.x < bounds.hi.x && bounds.lo.y < bounds.hi.y &&
        bounds.lo.z < bounds.hi.z))
    throw std::invalid_argument("scene bounds must have positive extent");
  SceneGrid scene;
  scene.res = res;
  scene.bounds = bounds;
  scene.raw_density.assign(res.voxels(), raw_density_fill);
  scene.raw_color.assign(3 * res.voxels(), raw_color_fill);
  return scene;
}

std::vector<double> SceneGrid::parameters() const {
  std::vector<double> p;
  p.reserve(param_count());
  p.insert(p.end(), raw_density.begin(), raw_density.end());
  p.insert(p.end(), raw_color.begin(), raw_color.end());
  return p;
}

void SceneGrid::set_parameters(const std::vector<double>& p) {
  if (p.size() != param_count())
    throw std::invalid_argument("parameter vector size mismatch");
  const std::size_t v = res.voxels();
  std::copy(p.begin(), p.begin() + v, raw_density.begin());
  std::copy(p.begin() + v, p.end(), raw_color.begin());
}

ActivatedFields activate(const SceneGrid& scene) {
  const std::size_t v = scene.res.voxels();
  ActivatedFields act;
  act.res = scene.res;
  act.bounds = scene.bounds;
  act.density.resize(v);
  act.color.resize(3 * v);
  act.d_density_draw.resize(v);
  act.d_color_draw.resize(3 * v);

  parallel_for(static_cast<std::int64_t>(v), [&](std::int64_t lo,
                                                 std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const double d = softplus(scene.raw_density[i]);
      act.density[i] = d;
      // softplus'(x) = logistic(x) = 1 - exp(-softplus(x))
      act.d_density_draw[i] = 1.0 - std::exp(-d);
      for (int c = 0; c < 3; ++c) {
        const std::size_t j = static_cast<std::size_t>(c) * v + i;
        const double s = logistic(scene.raw_color[j]);
        act.color[j] = s;
        act.d_color_draw[j] = s * (1.0 - s);
      }
    }
  });

  for (std::size_t i = 0; i < v; ++i)
    if (!std::isfinite(act.density[i]))
      throw std::runtime_error("non-finite density at voxel " +
                               std::to_string(i));
  for (std::size_t j = 0; j < 3 * v; ++j)
    if (!std::isfinite(act.color[j]))
      throw std::runtime_error("non-finite color at voxel " +
                               std::to_string(j % v));
  return act;
}

void activation_chain(const SceneGrid& scene, const ActivatedFields& act,
                      const std::vector<double>& grad_density,
                      const std::vector<double>& grad_color,
                      std::vector<double>& raw_grad) {
  const std::size_t v = scene.res.voxels();
  if (grad_density.size() != v || grad_color.size() != 3 * v ||
      raw_grad.size() != scene.param_count())
    throw std::invalid_argument("activation_chain: size mismatch");
  for (std::size_t i = 0; i < v; ++i)
    raw_grad[i] += grad_density[i] * act.d_density_draw[i];
  for (std::size_t j = 0; j < 3 * v; ++j)
    raw_grad[v + j] += grad_color[j] * act.d_color_draw[j];
}

TrilinearStencil stencil_at(const Resolution& res, const Aabb& bounds,
                            const Vec3& p) {
  TrilinearStencil s;
  s.inside = bounds.contains(p);
  if (!s.inside) return s;

  const Vec3 size = bounds.size();
  auto axis = [](double coord, double lo, double extent, int n, int& i0,
                 int& i1, double& f) {
    // Cell centers at (i + 0.5) / n of the extent.
    double g = (coord - lo) / extent * n - 0.5;
    g = std::clamp(g, 0.0, static_cast<double>(n - 1));
    i0 = std::min(static_cast<int>(g), n - 2 >= 0 ? n - 2 : 0);
    i0 = std::max(i0, 0);
    i1 = std::min(i0 + 1, n - 1);
    f = g - i0;
  };
  axis(p.x, bounds.lo.x, size.x, res.x, s.ix0, s.ix1, s.fx);
  axis(p.y, bounds.lo.y, size.y, res.y, s.iy0, s.iy1, s.fy);
  axis(p.z, bounds.lo.z, size.z, res.z, s.iz0, s.iz1, s.fz);
  return s;
}

double sample_field(const std::vector<double>& field, const Resolution& res,
                    const TrilinearStencil& s) {
  if (!s.inside) return 0.0;
  auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(res.x) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(res.y) * z);
  };
  const double wx0 = 1.0 - s.fx, wx1 = s.fx;
  const double wy0 = 1.0 - s.fy, wy1 = s.fy;
  const double wz0 = 1.0 - s.fz, wz1 = s.fz;
  return wz0 * (wy0 * (wx0 * field[idx(s.ix0, s.iy0, s.iz0)] +
                       wx1 * field[idx(s.ix1, s.iy0, s.iz0)]) +
                wy1 * (wx0 * field[idx(s.ix0, s.iy1, s.iz0)] +
                       wx1 * field[idx(s.ix1, s.iy1, s.iz0)])) +
         wz1 * (wy0 * (wx0 * field[idx(s.ix0, s.iy0, s.iz1)] +
                       wx1 * field[idx(s.ix1, s.iy0, s.iz1)]) +
                wy1 * (wx0 * field[idx(s.ix0, s.iy1, s.iz1)] +
                       wx1 * field[idx(s.ix1, s.iy1, s.iz1)]));
}

void scatter_field(std::vector<double>& grad, const Resolution& res,
                   const TrilinearStencil& s, double g) {
  if (!s.inside || g == 0.0) return;
  auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(res.x) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(res.y) * z);
  };
  const double wx0 = 1.0 - s.fx, wx1 = s.fx;
  const double wy0 = 1.0 - s.fy, wy1 = s.fy;
  const double wz0 = 1.0 - s.fz, wz1 = s.fz;
  grad[idx(s.ix0, s.iy0, s.iz0)] += g * wz0 * wy0 * wx0;
  grad[idx(s.ix1, s.iy0, s.iz0)] += g * wz0 * wy0 * wx1;
  grad[idx(s.ix0, s.iy1, s.iz0)] += g * wz0 * wy1 * wx0;
  grad[idx(s.ix1, s.iy1, s.iz0)] += g * wz0 * wy1 * wx1;
  grad[idx(s.ix0, s.iy0, s.iz1)] += g * wz1 * wy0 * wx0;
  grad[idx(s.ix1, s.iy0, s.iz1)] += g * wz1 * wy0 * wx1;
  grad[idx(s.ix0, s.iy1, s.iz1)] += g * wz1 * wy1 * wx0;
  grad[idx(s.ix1, s.iy1, s.iz1)] += g * wz1 * wy1 * wx1;
}

FieldSample fields_at(const SceneGrid& scene, const Vec3& point) {
  if (!point.finite())
    throw std::invalid_argument("fields_at: non-finite point");
  FieldSample out;
  const TrilinearStencil s = stencil_at(scene.res, scene.bounds, point);
  if (!s.inside) {
    out.density = 0.0;
    out.color = {1.0, 1.0, 1.0};  // background
    return out;
  }
  // Activate just the eight corners; equals interpolation of the activated
  // fields since activation is per voxel.
  const std::size_t v = scene.res.voxels();
  auto idx = [&](int x, int y, int z) {
    return scene.voxel_index(x, y, z);
  };
  auto tri = [&](auto&& value_at) {
    const double wx0 = 1.0 - s.fx, wx1 = s.fx;
    const double wy0 = 1.0 - s.fy, wy1 = s.fy;
    const double wz0 = 1.0 - s.fz, wz1 = s.fz;
    return wz0 * (wy0 * (wx0 * value_at(idx(s.ix0, s.iy0, s.iz0)) +
                         wx1 * value_at(idx(s.ix1, s.iy0, s.iz0))) +
                  wy1 * (wx0 * value_at(idx(s.ix0, s.iy1, s.iz0)) +
                         wx1 * value_at(idx(s.ix1, s.iy1, s.iz0)))) +
           wz1 * (wy0 * (wx0 * value_at(idx(s.ix0, s.iy0, s.iz1)) +
                         wx1 * value_at(idx(s.ix1, s.iy0, s.iz1))) +
                  wy1 * (wx0 * value_at(idx(s.ix0, s.iy1, s.iz1)) +
                         wx1 * value_at(idx(s.ix1, s.iy1, s.iz1))));
  };
  out.density =
      tri([&](std::size_t i) { return softplus(scene.raw_density[i]); });
  for (int c = 0; c < 3; ++c) {
    const double val = tri([&](std::size_t i) {
      return logistic(scene.raw_color[static_cast<std::size_t>(c) * v + i]);
    });
    if (c == 0) out.color.x = val;
    if (c == 1) out.color.y = val;
    if (c == 2) out.color.z = val;
  }
  return out;
}

void Camera::validate() const {
  if (!position.finite() || !target.finite() || !up.finite())
    throw std::invalid_argument("camera has non-finite fields");
  if ((position - target).norm() == 0.0)
    throw std::invalid_argument("camera position equals target");
  if (!(vertical_fov > 0.0 && vertical_fov < kPi))
    throw std::invalid_argument("camera fov must be in (0, pi)");
  if (width < 1 || height < 1)
    throw std::invalid_argument("camera image size must be positive");
  const Vec3 forward = (target - position).normalized();
  if (forward.cross(up).norm() < 1e-12)
    throw std::invalid_argument("camera up is parallel to view direction");
}

CameraBasis camera_basis(const Camera& cam) {
  cam.validate();
  CameraBasis b;
  b.origin = cam.position;
  b.forward = (cam.target - cam.position).normalized();
  b.right = b.forward.cross(cam.up).normalized();
  b.up = b.right.cross(b.forward);
  b.tan_half_fov = std::tan(cam.vertical_fov * 0.5);
  b.aspect = static_cast<double>(cam.width) / cam.height;
  return b;
}

Vec3 ray_direction(const CameraBasis& basis, const Camera& cam, int px,
                   int py) {
  const double ndc_x = (px + 0.5) / cam.width * 2.0 - 1.0;
  const double ndc_y = 1.0 - (py + 0.5) / cam.height * 2.0;
  const Vec3 dir = basis.forward +
                   basis.right * (ndc_x * basis.tan_half_fov * basis.aspect) +
                   basis.up * (ndc_y * basis.tan_half_fov);
  return dir.normalized();
}

std::vector<Camera> sample_cameras(const ViewSampler& sampler,
                                   const Vec3& center, double vertical_fov,
                                   int width, int height, std::int64_t step) {
  if (sampler.num_views < 1)
    throw std::invalid_argument("sampler num_views must be >= 1");
  if (sampler.elevation_min > sampler.elevation_max)
    throw std::invalid_argument("sampler elevation range is empty");

  std::vector<Camera> cams;
  cams.reserve(sampler.num_views);
  DetRng rng(mix_seed(sampler.seed, static_cast<std::uint64_t>(step),
                      0x63616d73ULL));
  for (int i = 0; i < sampler.num_views; ++i) {
    double azimuth, elevation;
    if (sampler.policy == AzimuthPolicy::UniformRing) {
      azimuth = 2.0 * kPi * i / sampler.num_views;
      elevation = 0.5 * (sampler.elevation_min + sampler.elevation_max);
    } else {
      azimuth = rng.uniform(0.0, 2.0 * kPi);
      elevation = rng.uniform(sampler.elevation_min, sampler.elevation_max);
    }
    Camera cam;
    cam.position = center + Vec3{sampler.radius * std::cos(elevation) *
                                     std::cos(azimuth),
                                 sampler.radius * std::cos(elevation) *
                                     std::sin(azimuth),
                                 sampler.radius * std::sin(elevation)};
    cam.target = center;
    cam.up = {0.0, 0.0, 1.0};
    const Vec3 fwd = (cam.target - cam.position).normalized();
    if (std::abs(fwd.dot(cam.up)) > 0.999) cam.up = {1.0, 0.0, 0.0};
    cam.vertical_fov = vertical_fov;
    cam.width = width;
    cam.height = height;
    cams.push_back(cam);
  }
  return cams;
}

namespace {

constexpr char kCkptMagic[] = "VLM3D-CKPT";
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> scene_checkpoint_bytes(const SceneGrid& scene) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCkptMagic, kCkptMagic + sizeof(kCkptMagic) - 1);
  append_pod(out, kCkptVersion);
  append_pod(out, static_cast<std::uint32_t>(scene.res.x));
  append_pod(out, static_cast<std::uint32_t>(scene.res.y));
  append_pod(out, static_cast<std::uint32_t>(scene.res.z));
  for (double b : {scene.bounds.lo.x, scene.bounds.lo.y, scene.bounds.lo.z,
                   scene.bounds.hi.x, scene.bounds.hi.y, scene.bounds.hi.z})
    append_pod(out, static_cast<float>(b));
  for (double d : scene.raw_density) append_pod(out, static_cast<float>(d));
  for (double c : scene.raw_color) append_pod(out, static_cast<float>(c));
  return out;
}

void save_scene_checkpoint(const std::string& path, const SceneGrid& scene) {
  const std::vector<std::uint8_t> bytes = scene_checkpoint_bytes(scene);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

SceneGrid load_scene_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCkptMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  if (read_pod<std::uint32_t>(is) != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  Resolution res;
  res.x = static_cast<int>(read_pod<std::uint32_t>(is));
  res.y = static_cast<int>(read_pod<std::uint32_t>(is));
  res.z = static_cast<int>(read_pod<std::uint32_t>(is));
  Aabb bounds;
  bounds.lo.x = read_pod<float>(is);
  bounds.lo.y = read_pod<float>(is);
  bounds.lo.z = read_pod<float>(is);
  bounds.hi.x = read_pod<float>(is);
  bounds.hi.y = read_pod<float>(is);
  bounds.hi.z = read_pod<float>(is);
  if (!is) throw std::runtime_error("truncated checkpoint header in " + path);
  SceneGrid scene = SceneGrid::make(res, bounds);
  for (auto& d : scene.raw_density) d = read_pod<float>(is);
  for (auto& c : scene.raw_color) c = read_pod<float>(is);
  if (!is) throw std::runtime_error("truncated checkpoint data in " + path);
  return scene;
}

}  // namespace vlm3d
