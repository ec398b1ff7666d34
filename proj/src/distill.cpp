#include "vlm3d/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vlm3d/rng.hpp"

namespace vlm3d {

namespace fs = std::filesystem;

double lambda_at(const AnnealSchedule& schedule, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lambda_at: step must be >= 0");
  if (schedule.anneal_steps <= 0) return schedule.lambda_end;
  const double frac = std::min(
      static_cast<double>(step) / static_cast<double>(schedule.anneal_steps),
      1.0);
  return schedule.lambda_start +
         (schedule.lambda_end - schedule.lambda_start) * frac;
}

double orientation_weight_at(const OrientationRegConfig& cfg,
                             std::int64_t step) {
  if (cfg.weight_scale == 0.0) return 0.0;
  double w = cfg.w_end;
  if (cfg.ramp_steps > 0) {
    const double frac = std::min(
        static_cast<double>(step) / static_cast<double>(cfg.ramp_steps), 1.0);
    w = cfg.w_start + (cfg.w_end - cfg.w_start) * frac;
  }
  return w * cfg.weight_scale;
}

void DistillConfig::validate() const {
  if (num_views < 1) throw std::invalid_argument("num_views must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be > 0");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (total_steps > 0 && total_steps < anneal.anneal_steps)
    throw std::invalid_argument("total_steps must cover anneal_steps");
  if (cfg_scale < 0.0) throw std::invalid_argument("cfg_scale must be >= 0");
  if (!(t_min >= 0.0 && t_min <= t_max && t_max <= 1.0))
    throw std::invalid_argument("timestep range must satisfy 0<=min<=max<=1");
  if (checkpoint_every < 1)
    throw std::invalid_argument("checkpoint_every must be >= 1");
}

RunState make_run_state(SceneGrid scene, const DistillConfig& config) {
  RunState state;
  state.scene = std::move(scene);
  if (config.optimizer.kind == OptimizerConfig::Kind::Adam) {
    state.adam_m.assign(state.scene.param_count(), 0.0);
    state.adam_v.assign(state.scene.param_count(), 0.0);
  }
  return state;
}

namespace {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<Camera> step_cameras(const RunState& state,
                                 const DistillConfig& config,
                                 const DistillContext& ctx) {
  ViewSampler sampler = ctx.views;
  sampler.num_views = config.num_views;
  sampler.seed = config.seed;
  return sample_cameras(sampler, state.scene.bounds.center(),
                        ctx.vertical_fov, ctx.image_width, ctx.image_height,
                        state.step);
}

}  // namespace

TotalGradient total_grad(const RunState& state, const DistillConfig& config,
                         const DistillContext& ctx) {
  config.validate();
  const SceneGrid& scene = state.scene;
  const std::vector<Camera> cams = step_cameras(state, config, ctx);
  const int n = static_cast<int>(cams.size());

  const ActivatedFields fields = activate(scene);
  std::vector<RenderTape> tapes;
  tapes.reserve(n);
  for (const Camera& cam : cams)
    tapes.push_back(render_taped(fields, cam, ctx.render));

  // The same rendered views feed the reward and the distillation gradient;
  // the scorer may see a truncated prefix under the single-view ablation.
  const int n_score = ctx.scorer_view_limit > 0
                          ? std::min(n, ctx.scorer_view_limit)
                          : n;
  ViewBatch batch;
  for (int i = 0; i < n_score; ++i) {
    batch.cameras.push_back(cams[i]);
    batch.views.push_back(preproc_apply(ctx.preprocess, tapes[i].image));
  }

  TotalGradient out;
  out.reward_info = reward_detailed(ctx.prompt, batch);

  const std::size_t voxels = fields.res.voxels();

  // Reward gradient, chained through the preprocessor and renderer adjoints.
  std::vector<double> reward_raw(scene.param_count(), 0.0);
  {
    std::vector<double> gd(voxels, 0.0), gc(3 * voxels, 0.0);
    const std::vector<Image> pixel_grads = reward_vjp(ctx.prompt, batch, 1.0);
    for (int i = 0; i < n_score; ++i) {
      const Image up =
          preproc_vjp(ctx.preprocess, tapes[i].image, pixel_grads[i]);
      render_vjp_fields(fields, cams[i], ctx.render, tapes[i], up, gd, gc);
    }
    activation_chain(scene, fields, gd, gc, reward_raw);
  }

  // Distillation gradient averaged over views; one timestep per step, one
  // noise draw per (step, view).
  std::vector<double> sds_raw(scene.param_count(), 0.0);
  {
    DetRng t_rng(mix_seed(config.seed, static_cast<std::uint64_t>(state.step),
                          0x74696d65ULL));
    const double t = t_rng.uniform(config.t_min, config.t_max);
    std::vector<double> gd(voxels, 0.0), gc(3 * voxels, 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
      const std::uint64_t eps_seed =
          mix_seed(config.seed, static_cast<std::uint64_t>(state.step),
                   static_cast<std::uint64_t>(i), 0x657073ULL);
      Image up = sds_residual(tapes[i].image, ctx.prior_model, ctx.noise, t,
                              eps_seed, ctx.prompt, i);
      for (double& v : up.data) v *= inv_n;
      render_vjp_fields(fields, cams[i], ctx.render, tapes[i], up, gd, gc);
    }
    activation_chain(scene, fields, gd, gc, sds_raw);
  }

  const double lambda = lambda_at(config.anneal, state.step);
  const double orient_w = orientation_weight_at(config.orientation, state.step);

  out.grad.assign(scene.param_count(), 0.0);
  for (std::size_t i = 0; i < out.grad.size(); ++i)
    out.grad[i] = sds_raw[i] - lambda * reward_raw[i];
  if (orient_w != 0.0) {
    const std::vector<double> orient_raw =
        orientation_reg_grad(scene, cams, ctx.render);
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      out.grad[i] += orient_w * orient_raw[i];
  }

  out.sds_grad_norm = l2_norm(sds_raw);
  out.reward_grad_norm = l2_norm(reward_raw);

  for (double g : out.grad)
    if (!std::isfinite(g))
      throw std::runtime_error(
          "non-finite combined gradient (sds_norm=" +
          std::to_string(out.sds_grad_norm) +
          ", reward_norm=" + std::to_string(out.reward_grad_norm) +
          ", lambda=" + std::to_string(lambda) + ")");
  return out;
}

void optimizer_update(RunState& state, const DistillConfig& config,
                      const std::vector<double>& grad) {
  std::vector<double> params = state.scene.parameters();
  if (grad.size() != params.size())
    throw std::invalid_argument("optimizer_update: gradient size mismatch");
  const double lr = config.learning_rate;
  if (config.optimizer.kind == OptimizerConfig::Kind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i] -= lr * grad[i];
  } else {
    const OptimizerConfig& opt = config.optimizer;
    const double t = static_cast<double>(state.step + 1);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.adam_m[i] =
          opt.beta1 * state.adam_m[i] + (1.0 - opt.beta1) * grad[i];
      state.adam_v[i] =
          opt.beta2 * state.adam_v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
      const double m_hat = state.adam_m[i] / bc1;
      const double v_hat = state.adam_v[i] / bc2;
      params[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
  state.scene.set_parameters(params);
}

void distill_step(RunState& state, const DistillConfig& config,
                  const DistillContext& ctx) {
  if (state.step >= config.total_steps)
    throw std::invalid_argument("distill_step: step budget exhausted");
  const auto start = std::chrono::steady_clock::now();

  const TotalGradient tg = total_grad(state, config, ctx);
  optimizer_update(state, config, tg.grad);

  const auto stop = std::chrono::steady_clock::now();
  MetricsRow row;
  row.step = state.step;
  row.lambda = lambda_at(config.anneal, state.step);
  row.reward = tg.reward_info.total.reward;
  row.p_yes = tg.reward_info.total.p_yes;
  row.sds_grad_norm = tg.sds_grad_norm;
  row.reward_grad_norm = tg.reward_grad_norm;
  row.content_discrepancy = tg.reward_info.content_discrepancy;
  row.geometry_variance = tg.reward_info.geometry_variance;
  row.wall_ms =
      std::chrono::duration<double, std::milli>(stop - start).count();
  state.metrics.push_back(row);
  ++state.step;
}

std::string metrics_row_json(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["lambda"] = row.lambda;
  j["reward"] = row.reward;
  j["p_yes"] = row.p_yes;
  j["sds_grad_norm"] = row.sds_grad_norm;
  j["reward_grad_norm"] = row.reward_grad_norm;
  j["content_D"] = row.content_discrepancy;
  j["geometry_V"] = row.geometry_variance;
  j["wall_ms"] = row.wall_ms;
  return j.dump();
}

namespace {

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void atomic_write(const std::string& path,
                  const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_run_checkpoint(const std::string& path, const RunState& state,
                         const DistillConfig& config) {
  std::vector<std::uint8_t> bytes = scene_checkpoint_bytes(state.scene);
  static constexpr char kMomentsMagic[] = "VLM3D-OPTM";
  bytes.insert(bytes.end(), kMomentsMagic,
               kMomentsMagic + sizeof(kMomentsMagic) - 1);
  const std::uint32_t kind =
      config.optimizer.kind == OptimizerConfig::Kind::Adam ? 1u : 0u;
  append_pod(bytes, kind);
  append_pod(bytes, static_cast<std::uint64_t>(state.step));
  if (kind == 1u) {
    for (double m : state.adam_m) append_pod(bytes, static_cast<float>(m));
    for (double v : state.adam_v) append_pod(bytes, static_cast<float>(v));
  }
  atomic_write(path, bytes);
}

RunState distill_run(SceneGrid initial_scene, const DistillConfig& config,
                     const DistillContext& ctx,
                     const std::string& output_dir) {
  config.validate();
  fs::create_directories(output_dir);
  fs::create_directories(output_dir + "/renders");

  RunState state = make_run_state(std::move(initial_scene), config);

  std::ofstream metrics(output_dir + "/metrics.jsonl",
                        std::ios::binary | std::ios::trunc);
  if (!metrics)
    throw std::runtime_error("cannot open metrics log in " + output_dir);

  while (state.step < config.total_steps) {
    distill_step(state, config, ctx);
    metrics << metrics_row_json(state.metrics.back()) << "\n";
    metrics.flush();
    if (state.step % config.checkpoint_every == 0 &&
        state.step < config.total_steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt",
                    static_cast<long long>(state.step));
      save_run_checkpoint(output_dir + "/" + std::string(name), state, config);
    }
  }
  save_run_checkpoint(output_dir + "/checkpoint_final.ckpt", state, config);

  // Held-out viewpoints: azimuths offset off the training ring, and a
  // slightly raised elevation.
  const Vec3 center = state.scene.bounds.center();
  const double elev =
      0.5 * (ctx.views.elevation_min + ctx.views.elevation_max) +
      deg_to_rad(10.0);
  for (int i = 0; i < 4; ++i) {
    const double azimuth =
        kPi / std::max(config.num_views, 1) + i * (kPi / 2.0);
    Camera cam;
    cam.position = center + Vec3{ctx.views.radius * std::cos(elev) *
                                     std::cos(azimuth),
                                 ctx.views.radius * std::cos(elev) *
                                     std::sin(azimuth),
                                 ctx.views.radius * std::sin(elev)};
    cam.target = center;
    cam.vertical_fov = ctx.vertical_fov;
    cam.width = ctx.image_width;
    cam.height = ctx.image_height;
    const Image rgb = render(state.scene, cam, ctx.render);
    const Image normals = render_normals(state.scene, cam, ctx.render);
    char rgb_name[64], normal_name[64];
    std::snprintf(rgb_name, sizeof(rgb_name), "final_view%d_rgb.png", i);
    std::snprintf(normal_name, sizeof(normal_name), "final_view%d_normal.png",
                  i);
    save_image_png(output_dir + "/renders/" + rgb_name, rgb);
    save_image_png(output_dir + "/renders/" + normal_name, normals);
  }
  return state;
}

}  // namespace vlm3d
