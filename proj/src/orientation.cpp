#include <cmath>
#include <stdexcept>

#include "vlm3d/distill.hpp"

namespace vlm3d {

namespace {

constexpr double kNormalFloorSq = 1e-6;  // softens n = -g/|g| near |g| = 0

struct OrientationAccum {
  double value = 0.0;
  std::vector<double>* grad_density = nullptr;  // activated-field gradient
};

// Marches all rays of one camera, adding the penalty value and (optionally)
// its activated-density gradient. Samples outside bounds carry no density
// and no gradient; rays march front to back so the compositing-weight chain
// matches the renderer's.
void accumulate_camera(const ActivatedFields& f, const Camera& cam,
                       const RenderConfig& cfg, OrientationAccum& acc) {
  const CameraBasis basis = camera_basis(cam);
  const double step = (cfg.far - cfg.near) / cfg.samples_per_ray;
  const Vec3 ext = f.bounds.size();
  const Vec3 h{ext.x / f.res.x, ext.y / f.res.y, ext.z / f.res.z};

  struct SampleRec {
    int k;
    double alpha;
    double hinge;       // max(0, n.d)^2
    double m;           // max(0, n.d)
    Vec3 n;             // softened unit normal
    double inv_len;     // 1 / sqrt(|g|^2 + floor)
  };
  std::vector<SampleRec> recs;
  recs.reserve(cfg.samples_per_ray);

  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      const Vec3 dir = ray_direction(basis, cam, px, py);
      recs.clear();

      double transmittance = 1.0;
      for (int k = 0; k < cfg.samples_per_ray; ++k) {
        const double t = cfg.near + (k + 0.5) * step;
        const Vec3 p = basis.origin + dir * t;
        const TrilinearStencil s = stencil_at(f.res, f.bounds, p);
        if (!s.inside) continue;
        const double density = sample_field(f.density, f.res, s);
        const double alpha = 1.0 - std::exp(-density * step);
        if (alpha == 0.0) continue;

        auto rho = [&](const Vec3& q) {
          return sample_field(f.density, f.res, stencil_at(f.res, f.bounds, q));
        };
        const Vec3 g{
            (rho({p.x + h.x, p.y, p.z}) - rho({p.x - h.x, p.y, p.z})) /
                (2.0 * h.x),
            (rho({p.x, p.y + h.y, p.z}) - rho({p.x, p.y - h.y, p.z})) /
                (2.0 * h.y),
            (rho({p.x, p.y, p.z + h.z}) - rho({p.x, p.y, p.z - h.z})) /
                (2.0 * h.z)};
        const double inv_len = 1.0 / std::sqrt(g.dot(g) + kNormalFloorSq);
        const Vec3 n = -g * inv_len;
        const double nd = n.dot(dir);
        const double m = nd > 0.0 ? nd : 0.0;
        const double hinge = m * m;

        acc.value += transmittance * alpha * hinge;
        if (acc.grad_density)
          recs.push_back({k, alpha, hinge, m, n, inv_len});
        transmittance *= 1.0 - alpha;
      }

      if (!acc.grad_density || recs.empty()) continue;

      // Backward over the recorded samples: suffix value H (per-unit
      // transmittance) and running T recomputed forward.
      std::vector<double>& gd = *acc.grad_density;
      std::vector<double> trans(recs.size());
      double t_run = 1.0;
      for (std::size_t j = 0; j < recs.size(); ++j) {
        trans[j] = t_run;
        t_run *= 1.0 - recs[j].alpha;
      }
      double suffix = 0.0;  // no background term
      for (std::size_t j = recs.size(); j-- > 0;) {
        const SampleRec& r = recs[j];
        const double T = trans[j];
        const double t = cfg.near + (r.k + 0.5) * step;
        const Vec3 p = basis.origin + dir * t;
        const TrilinearStencil s = stencil_at(f.res, f.bounds, p);

        // Through the compositing weight: d/d a_k = T (h_k - suffix).
        const double ga = T * (r.hinge - suffix);
        scatter_field(gd, f.res, s, ga * step * (1.0 - r.alpha));

        // Through the hinge: d h / d n = 2 m dir, pulled back through the
        // softened normalization and the central-difference stencil.
        if (r.m > 0.0) {
          const double w = T * r.alpha;
          const Vec3 dh_dn = dir * (2.0 * r.m * w);
          // n = -g * inv_len; dn/dg = -(I - n n^T(+floor correction)) * inv_len
          // with the softened length: dn/dg = -inv_len * (I + n g^T inv_len).
          // Using g = -n / inv_len:  dn/dg = -inv_len * (I - n n^T).
          const double ndot = r.n.dot(dh_dn);
          const Vec3 grad_g =
              (r.n * ndot - dh_dn) * r.inv_len;  // = -inv_len (I - nn^T) dh_dn
          // g components come from central differences of the density field.
          const Vec3 axes[3] = {{h.x, 0.0, 0.0}, {0.0, h.y, 0.0},
                                {0.0, 0.0, h.z}};
          const double comps[3] = {grad_g.x, grad_g.y, grad_g.z};
          const double spacing[3] = {h.x, h.y, h.z};
          for (int a = 0; a < 3; ++a) {
            if (comps[a] == 0.0) continue;
            const double c = comps[a] / (2.0 * spacing[a]);
            const TrilinearStencil sp =
                stencil_at(f.res, f.bounds, p + axes[a]);
            scatter_field(gd, f.res, sp, c);
            const TrilinearStencil sm =
                stencil_at(f.res, f.bounds, p - axes[a]);
            scatter_field(gd, f.res, sm, -c);
          }
        }

        suffix = r.alpha * r.hinge + (1.0 - r.alpha) * suffix;
      }
    }
  }
}

}  // namespace

double orientation_penalty(const SceneGrid& scene,
                           const std::vector<Camera>& cameras,
                           const RenderConfig& config) {
  config.validate();
  const ActivatedFields fields = activate(scene);
  OrientationAccum acc;
  for (const Camera& cam : cameras) accumulate_camera(fields, cam, config, acc);
  return acc.value;
}

std::vector<double> orientation_reg_grad(const SceneGrid& scene,
                                         const std::vector<Camera>& cameras,
                                         const RenderConfig& config) {
  config.validate();
  const ActivatedFields fields = activate(scene);
  std::vector<double> grad_density(fields.res.voxels(), 0.0);
  OrientationAccum acc;
  acc.grad_density = &grad_density;
  for (const Camera& cam : cameras) accumulate_camera(fields, cam, config, acc);

  std::vector<double> raw_grad(scene.param_count(), 0.0);
  const std::vector<double> zero_color(3 * fields.res.voxels(), 0.0);
  activation_chain(scene, fields, grad_density, zero_color, raw_grad);
  return raw_grad;
}

}  // namespace vlm3d
