#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlm3d/geometry.hpp"

namespace vlm3d {

struct Resolution {
  int x = 0, y = 0, z = 0;
  std::size_t voxels() const {
    return static_cast<std::size_t>(x) * y * z;
  }
  bool operator==(const Resolution&) const = default;
};

// The optimized parameters: a voxel grid of unconstrained raw values.
// Activated density = softplus(raw_density) >= 0, activated color =
// logistic(raw_color) in [0,1]. Flat parameter layout (used by every
// gradient in the project): raw_density voxels first, then raw_color as
// three channel planes; voxels are x-fastest.
struct SceneGrid {
  Resolution res;
  Aabb bounds;
  std::vector<double> raw_density;  // res.voxels()
  std::vector<double> raw_color;    // 3 * res.voxels(), plane per channel

  static SceneGrid make(Resolution res, const Aabb& bounds,
                        double raw_density_fill = -4.0,
                        double raw_color_fill = 0.0);

  std::size_t voxel_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(res.x) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(res.y) * z);
  }
  std::size_t param_count() const { return 4 * res.voxels(); }

  // Flat parameter access matching the layout above.
  std::vector<double> parameters() const;
  void set_parameters(const std::vector<double>& p);
};

// Per-voxel activated fields plus activation derivatives with respect to the
// raw parameters, computed once per optimization step and shared by all
// renders of that step.
struct ActivatedFields {
  Resolution res;
  Aabb bounds;
  std::vector<double> density;        // softplus(raw_density)
  std::vector<double> color;          // logistic(raw_color), 3 planes
  std::vector<double> d_density_draw; // d softplus / d raw
  std::vector<double> d_color_draw;   // d logistic / d raw
};

// Throws std::runtime_error naming the first non-finite voxel.
ActivatedFields activate(const SceneGrid& scene);

// Maps a gradient over activated fields to a gradient over the flat raw
// parameter vector (adds into raw_grad, which must have param_count slots).
void activation_chain(const SceneGrid& scene, const ActivatedFields& act,
                      const std::vector<double>& grad_density,
                      const std::vector<double>& grad_color,
                      std::vector<double>& raw_grad);

// Trilinear interpolation stencil for a world point. Voxel values live at
// cell centers; coordinates are clamped to the center range (edge extend),
// so the fields are constant over the outermost half-voxel margin.
struct TrilinearStencil {
  bool inside = false;
  int ix0 = 0, iy0 = 0, iz0 = 0;
  int ix1 = 0, iy1 = 0, iz1 = 0;
  double fx = 0.0, fy = 0.0, fz = 0.0;
};

TrilinearStencil stencil_at(const Resolution& res, const Aabb& bounds,
                            const Vec3& p);

double sample_field(const std::vector<double>& field, const Resolution& res,
                    const TrilinearStencil& s);
void scatter_field(std::vector<double>& grad, const Resolution& res,
                   const TrilinearStencil& s, double g);

struct FieldSample {
  double density = 0.0;
  Vec3 color;
};

// Activated fields at a world point; density 0 and white background color
// outside bounds. Throws std::invalid_argument on a non-finite point.
FieldSample fields_at(const SceneGrid& scene, const Vec3& point);

struct Camera {
  Vec3 position;
  Vec3 target;
  Vec3 up{0.0, 0.0, 1.0};
  double vertical_fov = deg_to_rad(40.0);
  int width = 64;
  int height = 64;

  void validate() const;
};

// Orthonormal view basis derived from a camera.
struct CameraBasis {
  Vec3 origin;
  Vec3 forward;
  Vec3 right;
  Vec3 up;
  double tan_half_fov = 0.0;
  double aspect = 1.0;
};

CameraBasis camera_basis(const Camera& cam);

// Unit ray direction through the center of pixel (px, py).
Vec3 ray_direction(const CameraBasis& basis, const Camera& cam, int px,
                   int py);

enum class AzimuthPolicy { UniformRing, Random };

struct ViewSampler {
  int num_views = 8;
  double radius = 2.5;
  double elevation_min = deg_to_rad(-30.0);
  double elevation_max = deg_to_rad(60.0);
  AzimuthPolicy policy = AzimuthPolicy::UniformRing;
  std::uint64_t seed = 0;
};

// N cameras on a sphere around `center`, all targeting it. UniformRing
// spaces azimuths exactly 2*pi/N apart at the mid elevation; Random draws
// azimuth and elevation per view from a stream derived from (seed, step).
std::vector<Camera> sample_cameras(const ViewSampler& sampler,
                                   const Vec3& center, double vertical_fov,
                                   int width, int height, std::int64_t step);

// Checkpoint: magic "VLM3D-CKPT", u32 version, u32 resolution xyz,
// f32 bounds (lo, hi), then raw_density and raw_color as little-endian
// float32 in x-fastest order (color as three channel planes).
void save_scene_checkpoint(const std::string& path, const SceneGrid& scene);
SceneGrid load_scene_checkpoint(const std::string& path);

// Serialize without touching the filesystem (distill appends optimizer
// moments to the same byte stream before the atomic write).
std::vector<std::uint8_t> scene_checkpoint_bytes(const SceneGrid& scene);

double softplus(double x);
double logistic(double x);

}  // namespace vlm3d
