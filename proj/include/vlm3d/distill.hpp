#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlm3d/preprocess.hpp"
#include "vlm3d/prior.hpp"
#include "vlm3d/renderer.hpp"
#include "vlm3d/scene.hpp"
#include "vlm3d/scorer.hpp"

namespace vlm3d {

// Piecewise-linear reward weight: lambda_start to lambda_end over
// anneal_steps, then held at lambda_end.
struct AnnealSchedule {
  double lambda_start = 300.0;
  double lambda_end = 1.0;
  std::int64_t anneal_steps = 10000;
  std::int64_t hold_steps = 5000;
};

double lambda_at(const AnnealSchedule& schedule, std::int64_t step);

// Orientation regularization ramp (weight grows from w_start to w_end over
// ramp_steps). weight_scale 0 disables the term entirely.
struct OrientationRegConfig {
  double w_start = 10.0;
  double w_end = 1000.0;
  std::int64_t ramp_steps = 5000;
  double weight_scale = 1.0;
};

double orientation_weight_at(const OrientationRegConfig& cfg,
                             std::int64_t step);

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct DistillConfig {
  int num_views = 8;
  double learning_rate = 1e-3;
  std::int64_t total_steps = 1500;
  AnnealSchedule anneal;
  double cfg_scale = 50.0;
  OrientationRegConfig orientation;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  double t_min = 0.02;
  double t_max = 0.98;
  std::int64_t checkpoint_every = 500;

  void validate() const;
};

// Everything the loop needs besides the optimized parameters.
struct DistillContext {
  ViewSampler views;
  double vertical_fov = deg_to_rad(40.0);
  int image_width = 64;
  int image_height = 64;
  RenderConfig render;
  PreprocChain preprocess;
  ScoreModel prior_model;
  NoiseSchedule noise;
  PromptSpec prompt;
  // 0 feeds the scorer every rendered view; 1 is the single-view ablation
  // (the distillation term always sees all views).
  int scorer_view_limit = 0;
};

struct MetricsRow {
  std::int64_t step = 0;
  double lambda = 0.0;
  double reward = 0.0;
  double p_yes = 0.0;
  double sds_grad_norm = 0.0;
  double reward_grad_norm = 0.0;
  double content_discrepancy = 0.0;
  double geometry_variance = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_row_json(const MetricsRow& row);

struct RunState {
  std::int64_t step = 0;
  SceneGrid scene;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::vector<MetricsRow> metrics;
};

RunState make_run_state(SceneGrid scene, const DistillConfig& config);

// Orientation penalty: sum over ray samples of w_fg * max(0, n . d)^2 with
// w_fg the compositing weight, d the unit view direction and n the smoothly
// normalized negative density gradient (central differences, one voxel
// spacing, normalization softened by a small floor so the penalty stays
// differentiable where the gradient vanishes).
double orientation_penalty(const SceneGrid& scene,
                           const std::vector<Camera>& cameras,
                           const RenderConfig& config);
std::vector<double> orientation_reg_grad(const SceneGrid& scene,
                                         const std::vector<Camera>& cameras,
                                         const RenderConfig& config);

struct TotalGradient {
  std::vector<double> grad;
  double sds_grad_norm = 0.0;
  double reward_grad_norm = 0.0;
  RewardBreakdown reward_info;
};

// Combined gradient at the current step: view-averaged distillation gradient
// minus lambda(step) times the reward gradient (chained through the
// preprocessor and renderer adjoints of the same rendered views), plus the
// weighted orientation term.
TotalGradient total_grad(const RunState& state, const DistillConfig& config,
                         const DistillContext& ctx);

// Applies the configured optimizer to the scene parameters in place
// (sgd: theta -= lr * g; adam: bias-corrected moments).
void optimizer_update(RunState& state, const DistillConfig& config,
                      const std::vector<double>& grad);

// One optimizer step; appends a metrics row and advances the step counter.
void distill_step(RunState& state, const DistillConfig& config,
                  const DistillContext& ctx);

// Full loop: runs total_steps steps, streams metrics.jsonl, writes periodic
// checkpoints and the final checkpoint (scene bytes plus optimizer moments,
// written atomically), and renders rgb + normal maps from four held-out
// viewpoints into renders/.
RunState distill_run(SceneGrid initial_scene, const DistillConfig& config,
                     const DistillContext& ctx,
                     const std::string& output_dir);

// Checkpoint with optimizer moments appended (see scene checkpoint format).
void save_run_checkpoint(const std::string& path, const RunState& state,
                         const DistillConfig& config);

}  // namespace vlm3d
