#include "vlm3d/renderer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "vlm3d/threading.hpp"

namespace vlm3d {

void RenderConfig::validate() const {
  if (samples_per_ray < 2)
    throw std::invalid_argument("samples_per_ray must be >= 2");
  if (!(0.0 < near && near < far))
    throw std::invalid_argument("render near/far must satisfy 0 < near < far");
}

namespace {

// Conservative [t0, t1] for the ray segment intersecting the bounds; the
// authoritative per-sample test is still the stencil's inside check, this
// only skips samples that are provably outside.
bool ray_box_range(const Vec3& origin, const Vec3& dir, const Aabb& box,
                   double& t0, double& t1) {
  t0 = -1e300;
  t1 = 1e300;
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
  const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

struct RaySampleRange {
  int k_begin = 0;
  int k_end = 0;  // exclusive
};

RaySampleRange sample_range(const Vec3& origin, const Vec3& dir,
                            const Aabb& box, const RenderConfig& cfg,
                            double step) {
  double t0, t1;
  if (!ray_box_range(origin, dir, box, t0, t1)) return {0, 0};
  t0 = std::max(t0, cfg.near);
  t1 = std::min(t1, cfg.far);
  if (t0 > t1) return {0, 0};
  // t_k = near + (k + 0.5) * step; pad by one sample on each side.
  int k_begin = static_cast<int>(std::floor((t0 - cfg.near) / step - 0.5)) - 1;
  int k_end = static_cast<int>(std::ceil((t1 - cfg.near) / step - 0.5)) + 2;
  k_begin = std::clamp(k_begin, 0, cfg.samples_per_ray);
  k_end = std::clamp(k_end, 0, cfg.samples_per_ray);
  return {k_begin, k_end};
}

struct RayResult {
  double rgb[3];
  double alpha;
};

// Marches one ray. If keep != nullptr, records (k, alpha, rgb) for samples
// inside bounds.
template <typename Keep>
RayResult march_ray(const ActivatedFields& f, const Vec3& origin,
                    const Vec3& dir, const RenderConfig& cfg, Keep&& keep) {
  const double step = (cfg.far - cfg.near) / cfg.samples_per_ray;
  const std::size_t voxels = f.res.voxels();
  const RaySampleRange range = sample_range(origin, dir, f.bounds, cfg, step);

  double transmittance = 1.0;
  double rgb[3] = {0.0, 0.0, 0.0};
  for (int k = range.k_begin; k < range.k_end; ++k) {
    const double t = cfg.near + (k + 0.5) * step;
    const Vec3 p = origin + dir * t;
    const TrilinearStencil s = stencil_at(f.res, f.bounds, p);
    if (!s.inside) continue;
    const double density = sample_field(f.density, f.res, s);
    const double alpha = 1.0 - std::exp(-density * step);
    if (alpha == 0.0) continue;
    double c[3];
    for (int ch = 0; ch < 3; ++ch) {
      // Channel planes share the stencil.
      const double* plane = f.color.data() + static_cast<std::size_t>(ch) * voxels;
      const double wx0 = 1.0 - s.fx, wx1 = s.fx;
      const double wy0 = 1.0 - s.fy, wy1 = s.fy;
      const double wz0 = 1.0 - s.fz, wz1 = s.fz;
      auto idx = [&](int x, int y, int z) {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(f.res.x) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(f.res.y) * z);
      };
      c[ch] = wz0 * (wy0 * (wx0 * plane[idx(s.ix0, s.iy0, s.iz0)] +
                            wx1 * plane[idx(s.ix1, s.iy0, s.iz0)]) +
                     wy1 * (wx0 * plane[idx(s.ix0, s.iy1, s.iz0)] +
                            wx1 * plane[idx(s.ix1, s.iy1, s.iz0)])) +
              wz1 * (wy0 * (wx0 * plane[idx(s.ix0, s.iy0, s.iz1)] +
                            wx1 * plane[idx(s.ix1, s.iy0, s.iz1)]) +
                     wy1 * (wx0 * plane[idx(s.ix0, s.iy1, s.iz1)] +
                            wx1 * plane[idx(s.ix1, s.iy1, s.iz1)]));
    }
    const double weight = transmittance * alpha;
    rgb[0] += weight * c[0];
    rgb[1] += weight * c[1];
    rgb[2] += weight * c[2];
    keep(k, alpha, c);
    const double next_t = transmittance * (1.0 - alpha);
    assert(next_t <= transmittance);  // transmittance is nonincreasing
    transmittance = next_t;
  }

  RayResult out;
  for (int ch = 0; ch < 3; ++ch)
    out.rgb[ch] = rgb[ch] + transmittance * cfg.background[ch];
  out.alpha = 1.0 - transmittance;
  assert(out.alpha >= 0.0 && out.alpha <= 1.0);
  return out;
}

}  // namespace

Image render(const ActivatedFields& fields, const Camera& camera,
             const RenderConfig& config) {
  config.validate();
  const CameraBasis basis = camera_basis(camera);
  Image img = Image::make(camera.width, camera.height, 4);
  parallel_for(camera.height, [&](std::int64_t y0, std::int64_t y1) {
    for (std::int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        const Vec3 dir = ray_direction(basis, camera, x, static_cast<int>(y));
        const RayResult r = march_ray(fields, basis.origin, dir, config,
                                      [](int, double, const double*) {});
        img.at(x, static_cast<int>(y), 0) = r.rgb[0];
        img.at(x, static_cast<int>(y), 1) = r.rgb[1];
        img.at(x, static_cast<int>(y), 2) = r.rgb[2];
        img.at(x, static_cast<int>(y), 3) = r.alpha;
      }
    }
  });
  return img;
}

Image render(const SceneGrid& scene, const Camera& camera,
             const RenderConfig& config) {
  return render(activate(scene), camera, config);
}

RenderTape render_taped(const ActivatedFields& fields, const Camera& camera,
                        const RenderConfig& config) {
  config.validate();
  const CameraBasis basis = camera_basis(camera);
  const std::size_t rays =
      static_cast<std::size_t>(camera.width) * camera.height;

  RenderTape tape;
  tape.image = Image::make(camera.width, camera.height, 4);
  tape.ray_offset.assign(rays + 1, 0);

  // Pass 1 (parallel): per-ray record counts.
  std::vector<std::int32_t> counts(rays, 0);
  parallel_for(camera.height, [&](std::int64_t y0, std::int64_t y1) {
    for (std::int64_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        int n = 0;
        const Vec3 dir = ray_direction(basis, camera, x, static_cast<int>(y));
        march_ray(fields, basis.origin, dir, config,
                  [&](int, double, const double*) { ++n; });
        counts[y * camera.width + x] = n;
      }
  });
  for (std::size_t r = 0; r < rays; ++r)
    tape.ray_offset[r + 1] = tape.ray_offset[r] + counts[r];
  const std::size_t total = tape.ray_offset[rays];
  tape.sample_k.resize(total);
  tape.sample_alpha.resize(total);
  tape.sample_rgb.resize(3 * total);

  // Pass 2 (parallel): fill records and the image.
  parallel_for(camera.height, [&](std::int64_t y0, std::int64_t y1) {
    for (std::int64_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const std::size_t ray = y * camera.width + x;
        std::size_t at = tape.ray_offset[ray];
        const Vec3 dir = ray_direction(basis, camera, x, static_cast<int>(y));
        const RayResult r = march_ray(
            fields, basis.origin, dir, config,
            [&](int k, double alpha, const double* c) {
              tape.sample_k[at] = k;
              tape.sample_alpha[at] = alpha;
              tape.sample_rgb[3 * at + 0] = c[0];
              tape.sample_rgb[3 * at + 1] = c[1];
              tape.sample_rgb[3 * at + 2] = c[2];
              ++at;
            });
        tape.image.at(x, static_cast<int>(y), 0) = r.rgb[0];
        tape.image.at(x, static_cast<int>(y), 1) = r.rgb[1];
        tape.image.at(x, static_cast<int>(y), 2) = r.rgb[2];
        tape.image.at(x, static_cast<int>(y), 3) = r.alpha;
      }
  });
  return tape;
}

void render_vjp_fields(const ActivatedFields& fields, const Camera& camera,
                       const RenderConfig& config, const RenderTape& tape,
                       const Image& upstream, std::vector<double>& grad_density,
                       std::vector<double>& grad_color) {
  config.validate();
  if (upstream.width != camera.width || upstream.height != camera.height ||
      upstream.channels != 4)
    throw std::invalid_argument("render_vjp: upstream shape mismatch");
  const std::size_t voxels = fields.res.voxels();
  if (grad_density.size() != voxels || grad_color.size() != 3 * voxels)
    throw std::invalid_argument("render_vjp: gradient buffer size mismatch");

  const CameraBasis basis = camera_basis(camera);
  const double step = (config.far - config.near) / config.samples_per_ray;

  std::vector<double> trans(config.samples_per_ray);
  // Ordered ray-major accumulation keeps results bit-identical regardless of
  // worker count.
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t ray = static_cast<std::size_t>(y) * camera.width + x;
      const std::int32_t begin = tape.ray_offset[ray];
      const std::int32_t end = tape.ray_offset[ray + 1];
      if (begin == end) continue;

      const double u_r = upstream.at(x, y, 0);
      const double u_g = upstream.at(x, y, 1);
      const double u_b = upstream.at(x, y, 2);
      const double u_a = upstream.at(x, y, 3);
      if (u_r == 0.0 && u_g == 0.0 && u_b == 0.0 && u_a == 0.0) continue;

      const Vec3 dir = ray_direction(basis, camera, x, y);

      // Transmittance before each recorded sample.
      double t_run = 1.0;
      for (std::int32_t j = begin; j < end; ++j) {
        trans[j - begin] = t_run;
        t_run *= 1.0 - tape.sample_alpha[j];
      }

      // Suffix radiance R (what a unit of transmittance arriving after the
      // current sample would still collect) and suffix product U.
      double R[3] = {config.background.x, config.background.y,
                     config.background.z};
      double U = 1.0;
      for (std::int32_t j = end - 1; j >= begin; --j) {
        const double a = tape.sample_alpha[j];
        const double* c = &tape.sample_rgb[3 * j];
        const double T = trans[j - begin];
        const double t_k = config.near + (tape.sample_k[j] + 0.5) * step;
        const Vec3 p = basis.origin + dir * t_k;
        const TrilinearStencil s = stencil_at(fields.res, fields.bounds, p);

        const double w = T * a;
        // d(color)/d(c_k) = T a per channel.
        const double gc0 = u_r * w;
        const double gc1 = u_g * w;
        const double gc2 = u_b * w;
        // d(color)/d(a_k) = T (c_k - R_{k+1}); d(alpha)/d(a_k) = T U.
        const double ga = u_r * T * (c[0] - R[0]) + u_g * T * (c[1] - R[1]) +
                          u_b * T * (c[2] - R[2]) + u_a * T * U;
        const double gd = ga * step * (1.0 - a);  // through a = 1 - exp(-d s)

        scatter_field(grad_density, fields.res, s, gd);
        if (gc0 != 0.0 || gc1 != 0.0 || gc2 != 0.0) {
          const std::size_t v = voxels;
          // Scatter into each channel plane with the shared stencil.
          auto scatter_plane = [&](int ch, double g) {
            if (g == 0.0) return;
            std::vector<double>& grad = grad_color;
            const double wx0 = 1.0 - s.fx, wx1 = s.fx;
            const double wy0 = 1.0 - s.fy, wy1 = s.fy;
            const double wz0 = 1.0 - s.fz, wz1 = s.fz;
            auto idx = [&](int xx, int yy, int zz) {
              return static_cast<std::size_t>(ch) * v +
                     static_cast<std::size_t>(xx) +
                     static_cast<std::size_t>(fields.res.x) *
                         (static_cast<std::size_t>(yy) +
                          static_cast<std::size_t>(fields.res.y) * zz);
            };
            grad[idx(s.ix0, s.iy0, s.iz0)] += g * wz0 * wy0 * wx0;
            grad[idx(s.ix1, s.iy0, s.iz0)] += g * wz0 * wy0 * wx1;
            grad[idx(s.ix0, s.iy1, s.iz0)] += g * wz0 * wy1 * wx0;
            grad[idx(s.ix1, s.iy1, s.iz0)] += g * wz0 * wy1 * wx1;
            grad[idx(s.ix0, s.iy0, s.iz1)] += g * wz1 * wy0 * wx0;
            grad[idx(s.ix1, s.iy0, s.iz1)] += g * wz1 * wy0 * wx1;
            grad[idx(s.ix0, s.iy1, s.iz1)] += g * wz1 * wy1 * wx0;
            grad[idx(s.ix1, s.iy1, s.iz1)] += g * wz1 * wy1 * wx1;
          };
          scatter_plane(0, gc0);
          scatter_plane(1, gc1);
          scatter_plane(2, gc2);
        }

        R[0] = a * c[0] + (1.0 - a) * R[0];
        R[1] = a * c[1] + (1.0 - a) * R[1];
        R[2] = a * c[2] + (1.0 - a) * R[2];
        U *= 1.0 - a;
      }
    }
  }
}

std::vector<double> render_vjp(const SceneGrid& scene, const Camera& camera,
                               const RenderConfig& config,
                               const Image& upstream) {
  const ActivatedFields fields = activate(scene);
  const RenderTape tape = render_taped(fields, camera, config);
  std::vector<double> grad_density(fields.res.voxels(), 0.0);
  std::vector<double> grad_color(3 * fields.res.voxels(), 0.0);
  render_vjp_fields(fields, camera, config, tape, upstream, grad_density,
                    grad_color);
  std::vector<double> raw_grad(scene.param_count(), 0.0);
  activation_chain(scene, fields, grad_density, grad_color, raw_grad);
  return raw_grad;
}

Image render_normals(const SceneGrid& scene, const Camera& camera,
                     const RenderConfig& config) {
  config.validate();
  const ActivatedFields fields = activate(scene);
  const CameraBasis basis = camera_basis(camera);
  const double step = (config.far - config.near) / config.samples_per_ray;
  const Vec3 ext = fields.bounds.size();
  const Vec3 h{ext.x / fields.res.x, ext.y / fields.res.y,
               ext.z / fields.res.z};

  Image img = Image::make(camera.width, camera.height, 3);
  parallel_for(camera.height, [&](std::int64_t y0, std::int64_t y1) {
    for (std::int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        const Vec3 dir = ray_direction(basis, camera, x, static_cast<int>(y));
        const RaySampleRange range =
            sample_range(basis.origin, dir, fields.bounds, config, step);
        double transmittance = 1.0;
        Vec3 mean_normal;
        for (int k = range.k_begin; k < range.k_end; ++k) {
          const double t = config.near + (k + 0.5) * step;
          const Vec3 p = basis.origin + dir * t;
          const TrilinearStencil s = stencil_at(fields.res, fields.bounds, p);
          if (!s.inside) continue;
          const double density = sample_field(fields.density, fields.res, s);
          const double alpha = 1.0 - std::exp(-density * step);
          if (alpha == 0.0) continue;
          auto rho = [&](const Vec3& q) {
            const TrilinearStencil sq =
                stencil_at(fields.res, fields.bounds, q);
            return sample_field(fields.density, fields.res, sq);
          };
          const Vec3 grad{
              (rho({p.x + h.x, p.y, p.z}) - rho({p.x - h.x, p.y, p.z})) /
                  (2.0 * h.x),
              (rho({p.x, p.y + h.y, p.z}) - rho({p.x, p.y - h.y, p.z})) /
                  (2.0 * h.y),
              (rho({p.x, p.y, p.z + h.z}) - rho({p.x, p.y, p.z - h.z})) /
                  (2.0 * h.z)};
          const double norm = grad.norm();
          if (norm > 1e-12)
            mean_normal += (transmittance * alpha / norm) * -grad;
          transmittance *= 1.0 - alpha;
        }
        const double alpha_total = 1.0 - transmittance;
        Vec3 encoded{0.5, 0.5, 0.5};
        const double mn = mean_normal.norm();
        if (mn > 1e-12) {
          const Vec3 n = mean_normal / mn;
          encoded = {(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5};
        }
        for (int ch = 0; ch < 3; ++ch)
          img.at(x, static_cast<int>(y), ch) =
              alpha_total * encoded[ch] +
              (1.0 - alpha_total) * config.background[ch];
      }
    }
  });
  return img;
}

}  // namespace vlm3d
