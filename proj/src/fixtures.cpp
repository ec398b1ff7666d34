#include "vlm3d/fixtures.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vlm3d/preprocess.hpp"
#include "vlm3d/renderer.hpp"
#include "vlm3d/rng.hpp"

namespace vlm3d {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

double inverse_softplus(double y) {
  const double floored = std::max(y, 1e-9);
  // log(exp(y) - 1), stable for large y
  if (floored > 20.0) return floored;
  return std::log(std::expm1(floored));
}

double logit(double p) {
  const double c = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
  return std::log(c / (1.0 - c));
}

// Smooth radial falloff over about 1.5 voxels around the surface.
double shell_density(double dist_to_surface, double shell, double peak) {
  return peak * logistic(-dist_to_surface / shell);
}

void fill_sphere(SceneGrid& scene, const Vec3& center, double radius,
                 const Vec3& color, double peak_density) {
  const Vec3 ext = scene.bounds.size();
  const double shell =
      1.5 * std::min({ext.x / scene.res.x, ext.y / scene.res.y,
                      ext.z / scene.res.z});
  const std::size_t voxels = scene.res.voxels();
  for (int z = 0; z < scene.res.z; ++z)
    for (int y = 0; y < scene.res.y; ++y)
      for (int x = 0; x < scene.res.x; ++x) {
        const Vec3 p{
            scene.bounds.lo.x + (x + 0.5) / scene.res.x * ext.x,
            scene.bounds.lo.y + (y + 0.5) / scene.res.y * ext.y,
            scene.bounds.lo.z + (z + 0.5) / scene.res.z * ext.z};
        const double dist = (p - center).norm() - radius;
        const double density = shell_density(dist, shell, peak_density);
        const std::size_t i = scene.voxel_index(x, y, z);
        const double existing = softplus(scene.raw_density[i]);
        if (density > existing) {
          scene.raw_density[i] = inverse_softplus(density);
          scene.raw_color[i] = logit(color.x);
          scene.raw_color[voxels + i] = logit(color.y);
          scene.raw_color[2 * voxels + i] = logit(color.z);
        }
      }
}

}  // namespace

SceneGrid make_sphere_scene(Resolution res, const Aabb& bounds, double radius,
                            const Vec3& center_offset, const Vec3& color,
                            double peak_density) {
  SceneGrid scene = SceneGrid::make(res, bounds, -12.0, 0.0);
  fill_sphere(scene, bounds.center() + center_offset, radius, color,
              peak_density);
  return scene;
}

SceneGrid make_two_lobe_scene(Resolution res, const Aabb& bounds,
                              double lobe_radius, double lobe_offset,
                              const Vec3& color, double peak_density) {
  SceneGrid scene = SceneGrid::make(res, bounds, -12.0, 0.0);
  fill_sphere(scene, bounds.center() + Vec3{lobe_offset, 0.0, 0.0},
              lobe_radius, color, peak_density);
  fill_sphere(scene, bounds.center() - Vec3{lobe_offset, 0.0, 0.0},
              lobe_radius, color, peak_density);
  return scene;
}

SceneGrid make_random_scene(Resolution res, const Aabb& bounds,
                            std::uint64_t seed, double density_lo,
                            double density_hi) {
  SceneGrid scene = SceneGrid::make(res, bounds);
  DetRng rng(mix_seed(seed, 0x7363656eULL));
  for (auto& d : scene.raw_density) d = rng.uniform(density_lo, density_hi);
  for (auto& c : scene.raw_color) c = rng.uniform(-1.5, 1.5);
  return scene;
}

namespace {

struct TaskShape {
  Resolution grid;
  int image = 32;
  int scorer_image = 24;
  int samples = 48;
  int views = 8;
  double fov_deg = 35.0;
  double radius = 2.5;
  double elevation_deg = 15.0;
};

// Renders reference views, writes distillation targets (rgb) and content
// silhouettes (preprocessed alpha), and returns the two path lists.
struct TargetPaths {
  std::vector<std::string> sds;
  std::vector<std::string> silhouettes;
};

TargetPaths write_targets(const std::string& dir, const TaskShape& shape,
                          const std::vector<const SceneGrid*>& per_view_scene,
                          const PreprocChain& chain) {
  fs::create_directories(dir + "/targets");
  RenderConfig render_cfg;
  render_cfg.samples_per_ray = shape.samples;
  render_cfg.near = 1.2;
  render_cfg.far = 3.8;

  ViewSampler sampler;
  sampler.num_views = shape.views;
  sampler.radius = shape.radius;
  sampler.elevation_min = deg_to_rad(shape.elevation_deg);
  sampler.elevation_max = deg_to_rad(shape.elevation_deg);
  const Vec3 center = per_view_scene.front()->bounds.center();
  const std::vector<Camera> cams =
      sample_cameras(sampler, center, deg_to_rad(shape.fov_deg), shape.image,
                     shape.image, 0);

  TargetPaths paths;
  for (int i = 0; i < shape.views; ++i) {
    // Full rgba targets: matching the alpha channel pins silhouettes, which
    // rgb alone leaves underdetermined at the boundary.
    const Image view = render(*per_view_scene[i], cams[i], render_cfg);
    const std::string sds_rel = "targets/sds_view" + std::to_string(i) + ".vimg";
    save_image_raw(dir + "/" + sds_rel, view);
    paths.sds.push_back(sds_rel);

    const Image pre = preproc_apply(chain, view);
    Image sil = Image::make(pre.width, pre.height, 1);
    for (int y = 0; y < pre.height; ++y)
      for (int x = 0; x < pre.width; ++x) sil.at(x, y, 0) = pre.at(x, y, 3);
    const std::string sil_rel = "targets/sil_view" + std::to_string(i) + ".vimg";
    save_image_raw(dir + "/" + sil_rel, sil);
    paths.silhouettes.push_back(sil_rel);
  }
  return paths;
}

json base_config(const TaskShape& shape, std::uint64_t seed) {
  json doc;
  doc["seed"] = seed;
  doc["scene"] = {{"resolution", {shape.grid.x, shape.grid.y, shape.grid.z}},
                  {"bounds_min", {-0.5, -0.5, -0.5}},
                  {"bounds_max", {0.5, 0.5, 0.5}},
                  {"init_raw_density", -4.0},
                  {"init_raw_color", 0.0},
                  {"init_noise", 0.0}};
  doc["views"] = {{"num_views", shape.views},
                  {"radius", shape.radius},
                  {"elevation_deg", {shape.elevation_deg, shape.elevation_deg}},
                  {"azimuth_policy", "uniform-ring"},
                  {"fov_deg", shape.fov_deg},
                  {"image_width", shape.image},
                  {"image_height", shape.image}};
  doc["render"] = {{"samples_per_ray", shape.samples},
                   {"near", 1.2},
                   {"far", 3.8},
                   {"background", {1.0, 1.0, 1.0}}};
  doc["preprocess"] = {
      {"stages",
       {{{"type", "resize"},
         {"width", shape.scorer_image},
         {"height", shape.scorer_image}}}}};
  return doc;
}

PreprocChain chain_for(const TaskShape& shape) {
  PreprocChain chain;
  chain.stages.push_back(ResizeStage{shape.scorer_image, shape.scorer_image});
  return chain;
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << doc.dump(2) << "\n";
}

void write_sphere_fixture(const std::string& dir, std::uint64_t seed) {
  TaskShape shape;
  shape.grid = {32, 32, 32};
  shape.image = 40;
  shape.scorer_image = 32;
  shape.samples = 64;
  shape.fov_deg = 30.0;
  const SceneGrid reference =
      make_sphere_scene(shape.grid, {{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}},
                        0.32);
  std::vector<const SceneGrid*> per_view(shape.views, &reference);
  const TargetPaths targets =
      write_targets(dir, shape, per_view, chain_for(shape));

  json doc = base_config(shape, seed);
  doc["prior"] = {{"variant", "point-mass"},
                  {"targets", targets.sds},
                  {"sigma_min", 0.01},
                  {"sigma_max", 10.0},
                  {"weighting", "sigma-squared"}};
  doc["prompt"] = {
      {"description_id", "sphere-oracle"},
      {"query_mode", "combined"},
      {"criteria",
       {{{"kind", "content-silhouette"},
         {"weight", 1.0},
         {"sharpness", 20.0},
         {"threshold", 0.01},
         {"targets", targets.silhouettes}},
        {{"kind", "geometry-consistency"},
         {"weight", 1.0},
         {"sharpness", 2000.0},
         {"tolerance", 1e-4}}}}};
  doc["distill"] = {{"total_steps", 2000},
                    {"learning_rate", 0.015},
                    {"anneal",
                     {{"lambda_start", 0.0},
                      {"lambda_end", 0.0},
                      {"anneal_steps", 0},
                      {"hold_steps", 0}}},
                    {"cfg_scale", 50.0},
                    {"orientation",
                     {{"w_start", 10.0},
                      {"w_end", 1000.0},
                      {"ramp_steps", 500},
                      {"weight_scale", 0.0}}},
                    {"optimizer",
                     {{"kind", "adam"},
                      {"beta1", 0.9},
                      {"beta2", 0.99},
                      {"eps", 1e-8}}},
                    {"timestep_range", {0.02, 0.98}},
                    {"checkpoint_every", 1000}};
  write_json(dir + "/config.json", doc);
}

// Per-view distillation targets alternate between a large and a small
// reference sphere, so distillation alone drives neighbouring views toward
// very different silhouette areas; the content targets are the consistent
// mid-size views.
void write_janus_fixture(const std::string& dir, std::uint64_t seed,
                         bool short_schedule) {
  TaskShape shape;
  shape.grid = {16, 16, 16};
  shape.image = 24;
  shape.scorer_image = 18;
  shape.samples = 32;

  const Aabb bounds{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  const SceneGrid big = make_sphere_scene(shape.grid, bounds, 0.34);
  const SceneGrid small = make_sphere_scene(shape.grid, bounds, 0.16);
  const SceneGrid mid = make_sphere_scene(shape.grid, bounds, 0.26);

  std::vector<const SceneGrid*> per_view(shape.views);
  for (int i = 0; i < shape.views; ++i)
    per_view[i] = (i % 2 == 0) ? &big : &small;
  const PreprocChain chain = chain_for(shape);
  const TargetPaths sds_targets = write_targets(dir, shape, per_view, chain);

  std::vector<const SceneGrid*> mid_views(shape.views, &mid);
  TaskShape mid_shape = shape;
  const TargetPaths content_targets =
      write_targets(dir + "/content", mid_shape, mid_views, chain);
  // Move silhouettes up; keep directory tidy.
  std::vector<std::string> silhouettes;
  for (int i = 0; i < shape.views; ++i)
    silhouettes.push_back("content/" + content_targets.silhouettes[i]);

  json doc = base_config(shape, seed);
  doc["prior"] = {{"variant", "point-mass"},
                  {"targets", sds_targets.sds},
                  {"sigma_min", 0.01},
                  {"sigma_max", 10.0},
                  {"weighting", "sigma-squared"}};
  doc["prompt"] = {
      {"description_id", short_schedule ? "janus-short" : "janus"},
      {"query_mode", "combined"},
      {"criteria",
       {{{"kind", "content-silhouette"},
         {"weight", 1.0},
         {"sharpness", 20.0},
         {"threshold", 0.01},
         {"targets", silhouettes}},
        {{"kind", "geometry-consistency"},
         {"weight", 1.0},
         {"sharpness", 2000.0},
         {"tolerance", 1e-4}}}}};
  const std::int64_t anneal_steps = short_schedule ? 300 : 1000;
  const std::int64_t hold_steps = short_schedule ? 150 : 500;
  doc["distill"] = {{"total_steps", anneal_steps + hold_steps},
                    {"learning_rate", 0.02},
                    {"anneal",
                     {{"lambda_start", 300.0},
                      {"lambda_end", 1.0},
                      {"anneal_steps", anneal_steps},
                      {"hold_steps", hold_steps}}},
                    {"cfg_scale", 50.0},
                    {"orientation",
                     {{"w_start", 10.0},
                      {"w_end", 1000.0},
                      {"ramp_steps", 500},
                      {"weight_scale", 0.0}}},
                    {"optimizer",
                     {{"kind", "adam"},
                      {"beta1", 0.9},
                      {"beta2", 0.99},
                      {"eps", 1e-8}}},
                    {"timestep_range", {0.02, 0.98}},
                    {"checkpoint_every", 500}};
  write_json(dir + "/config.json", doc);
}

void write_determinism_fixture(const std::string& dir, std::uint64_t seed) {
  TaskShape shape;
  shape.grid = {8, 8, 8};
  shape.image = 12;
  shape.scorer_image = 10;
  shape.samples = 16;
  shape.views = 4;

  const Aabb bounds{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  const SceneGrid reference = make_sphere_scene(shape.grid, bounds, 0.3);
  std::vector<const SceneGrid*> per_view(shape.views, &reference);
  const TargetPaths targets =
      write_targets(dir, shape, per_view, chain_for(shape));

  json doc = base_config(shape, seed);
  doc["prior"] = {{"variant", "point-mass"},
                  {"targets", targets.sds},
                  {"sigma_min", 0.01},
                  {"sigma_max", 10.0},
                  {"weighting", "sigma-squared"}};
  doc["prompt"] = {
      {"description_id", "determinism"},
      {"query_mode", "combined"},
      {"criteria",
       {{{"kind", "content-silhouette"},
         {"weight", 1.0},
         {"sharpness", 20.0},
         {"threshold", 0.01},
         {"targets", targets.silhouettes}},
        {{"kind", "geometry-consistency"},
         {"weight", 1.0},
         {"sharpness", 2000.0},
         {"tolerance", 1e-4}}}}};
  doc["distill"] = {{"total_steps", 30},
                    {"learning_rate", 0.02},
                    {"anneal",
                     {{"lambda_start", 300.0},
                      {"lambda_end", 1.0},
                      {"anneal_steps", 20},
                      {"hold_steps", 10}}},
                    {"cfg_scale", 50.0},
                    {"orientation",
                     {{"w_start", 10.0},
                      {"w_end", 1000.0},
                      {"ramp_steps", 20},
                      {"weight_scale", 1.0}}},
                    {"optimizer",
                     {{"kind", "adam"},
                      {"beta1", 0.9},
                      {"beta2", 0.99},
                      {"eps", 1e-8}}},
                    {"timestep_range", {0.02, 0.98}},
                    {"checkpoint_every", 10}};
  write_json(dir + "/config.json", doc);
}

}  // namespace

void write_fixture(const std::string& kind, const std::string& dir,
                   std::uint64_t seed) {
  fs::create_directories(dir);
  if (kind == "sphere")
    write_sphere_fixture(dir, seed);
  else if (kind == "janus")
    write_janus_fixture(dir, seed, /*short_schedule=*/false);
  else if (kind == "janus-short")
    write_janus_fixture(dir, seed, /*short_schedule=*/true);
  else if (kind == "determinism")
    write_determinism_fixture(dir, seed);
  else
    throw std::invalid_argument("unknown fixture kind: " + kind);
}

}  // namespace vlm3d
