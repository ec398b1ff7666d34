#pragma once

#include <cstdint>
#include <string>

#include "vlm3d/scene.hpp"

namespace vlm3d {

// Reference scenes for synthetic tasks: a soft-shelled sphere and a two-lobe
// variant (two spheres side by side). Density ramps over roughly 1.5 voxels
// so silhouettes and normals are well behaved at grid resolution.
SceneGrid make_sphere_scene(Resolution res, const Aabb& bounds, double radius,
                            const Vec3& center_offset = {},
                            const Vec3& color = {0.25, 0.45, 0.75},
                            double peak_density = 40.0);

SceneGrid make_two_lobe_scene(Resolution res, const Aabb& bounds,
                              double lobe_radius, double lobe_offset,
                              const Vec3& color = {0.75, 0.4, 0.25},
                              double peak_density = 40.0);

// Seeded random scene for gradient checks: raw values drawn uniformly.
SceneGrid make_random_scene(Resolution res, const Aabb& bounds,
                            std::uint64_t seed, double density_lo = -3.0,
                            double density_hi = 1.0);

// Materialized task directories (target images + config.json, with paths
// relative to the directory):
//   sphere       - content oracle task: distill toward 8 rendered views of a
//                  reference sphere; reward weight held at zero.
//   janus        - two-lobe task whose per-view targets alternate between a
//                  large and a small reference, so distillation alone drives
//                  the views apart; composite scorer enabled with the
//                  annealed schedule.
//   janus-short  - same task with a short schedule, sized for ablation runs.
//   determinism  - a small fast task for replay comparisons.
void write_fixture(const std::string& kind, const std::string& dir,
                   std::uint64_t seed);

}  // namespace vlm3d
