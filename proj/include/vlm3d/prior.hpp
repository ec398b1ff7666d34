#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vlm3d/image.hpp"
#include "vlm3d/renderer.hpp"
#include "vlm3d/scene.hpp"

namespace vlm3d {

enum class Weighting { Constant, Sigma, SigmaSquared };

// sigma(t) = sigma_min^(1-t) * sigma_max^t, strictly increasing on [0,1].
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  Weighting weighting = Weighting::SigmaSquared;

  void validate() const;
};

double sigma_at(const NoiseSchedule& schedule, double t);
double weight_at(const NoiseSchedule& schedule, double t);

struct DiffusedSample {
  Image x_t;
  Image epsilon;
  double t = 0.0;
};

// x_t = x_0 + sigma(t) * epsilon with epsilon drawn from a seeded standard
// normal, pixel-sequential, so reruns are bit-identical.
DiffusedSample diffuse(const Image& image, const NoiseSchedule& schedule,
                       double t, std::uint64_t seed);

struct PromptSpec;  // scorer module; passed through for conditioning

// Closed-form stand-ins for a conditional score network. PointMass holds one
// clean target image per view; GaussianMixture is a per-pixel mixture over
// mean images with a shared data variance; Paired blends a conditional and
// an unconditional model via classifier-free guidance.
struct ScoreModel {
  enum class Kind { PointMass, GaussianMixture, Paired };
  Kind kind = Kind::PointMass;

  // PointMass
  std::vector<Image> targets;  // one per view

  // GaussianMixture
  std::vector<double> mixture_weights;  // positive, sum to 1
  std::vector<Image> mixture_means;
  double data_variance = 0.0;

  // Paired
  std::shared_ptr<ScoreModel> conditional;
  std::shared_ptr<ScoreModel> unconditional;
  double cfg_scale = 1.0;

  void validate() const;

  static ScoreModel point_mass(std::vector<Image> targets);
  static ScoreModel gaussian_mixture(std::vector<double> weights,
                                     std::vector<Image> means,
                                     double data_variance);
  static ScoreModel paired(ScoreModel conditional, ScoreModel unconditional,
                           double cfg_scale);
};

// Score field of the noised marginal at x_t: the gradient of its log
// density. view_index selects the per-view target for PointMass models.
Image score(const ScoreModel& model, const Image& x_t, double t,
            const NoiseSchedule& schedule, const PromptSpec& prompt,
            int view_index);

// Per-pixel mixture responsibilities (one image per component, summing to 1
// at every pixel). Exposed for tests.
std::vector<Image> mixture_responsibilities(const ScoreModel& model,
                                            const Image& x_t, double sigma);

// uncond + scale * (cond - uncond), elementwise.
Image cfg_score(const Image& cond_score, const Image& uncond_score,
                double scale);

// One-view distillation gradient over the flat raw parameter vector:
// renders x_0 = I(theta, v), diffuses to x_t, forms the per-pixel residual
// w(t) * (-sigma^2 * score(x_t) - sigma * eps) / sigma^2 and pulls it back
// through the renderer. A plain descent step on this gradient drives the
// render toward the prior mode (for PointMass, the expected residual is
// w(t) * (x_0 - x*) / sigma^2).
std::vector<double> sds_grad(const SceneGrid& scene, const Camera& camera,
                             const RenderConfig& config,
                             const ScoreModel& model,
                             const NoiseSchedule& schedule, double t,
                             std::uint64_t seed, const PromptSpec& prompt,
                             int view_index = 0);

// Residual-only variant used by the optimization loop, which owns the
// render tape and the field-space accumulation: given the rendered rgb view,
// returns the rgba upstream image to feed render_vjp (alpha channel zero).
Image sds_residual(const Image& rendered_rgba, const ScoreModel& model,
                   const NoiseSchedule& schedule, double t, std::uint64_t seed,
                   const PromptSpec& prompt, int view_index);

}  // namespace vlm3d
