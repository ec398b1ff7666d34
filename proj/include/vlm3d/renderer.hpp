#pragma once

#include <vector>

#include "vlm3d/image.hpp"
#include "vlm3d/scene.hpp"

namespace vlm3d {

struct RenderConfig {
  int samples_per_ray = 64;
  double near = 1.0;
  double far = 4.0;
  Vec3 background{1.0, 1.0, 1.0};

  void validate() const;
};

// Per-ray march records kept by the forward pass so the adjoint can run
// without re-fetching the fields. Only samples inside the grid bounds are
// recorded; everything else has exactly zero opacity and no gradient.
struct RenderTape {
  Image image;  // rgba
  std::vector<std::int32_t> ray_offset;  // rays + 1 prefix offsets
  std::vector<std::int32_t> sample_k;    // sample index along the ray
  std::vector<double> sample_alpha;
  std::vector<double> sample_rgb;        // 3 per sample
};

// Emission-absorption marching: per pixel, samples_per_ray equidistant
// midpoints t_k on [near, far] with step d = (far-near)/samples_per_ray,
// opacity a_k = 1 - exp(-density * d), transmittance T_k = prod(1 - a_j),
// color = sum T_k a_k c_k + T_final * background, alpha = 1 - T_final.
Image render(const SceneGrid& scene, const Camera& camera,
             const RenderConfig& config);
Image render(const ActivatedFields& fields, const Camera& camera,
             const RenderConfig& config);

RenderTape render_taped(const ActivatedFields& fields, const Camera& camera,
                        const RenderConfig& config);

// Exact adjoint of render under the same sampling; returns the gradient over
// the flat raw parameter vector. upstream must be rgba with the render size.
std::vector<double> render_vjp(const SceneGrid& scene, const Camera& camera,
                               const RenderConfig& config,
                               const Image& upstream);

// Adjoint against the activated fields, accumulating into the given grids
// (density: voxels; color: 3 planes). Accumulation is ordered ray-major so
// results are bit-identical for any worker count.
void render_vjp_fields(const ActivatedFields& fields, const Camera& camera,
                       const RenderConfig& config, const RenderTape& tape,
                       const Image& upstream, std::vector<double>& grad_density,
                       std::vector<double>& grad_color);

// Diagnostic normal map: per pixel the compositing-weighted mean of unit
// negative density gradients, renormalized, encoded (n+1)/2 and alpha-blended
// with the background. Not part of the differentiable path.
Image render_normals(const SceneGrid& scene, const Camera& camera,
                     const RenderConfig& config);

}  // namespace vlm3d
