#include "vlm3d/prior.hpp"

#include <cmath>
#include <stdexcept>

#include "vlm3d/rng.hpp"
#include "vlm3d/scorer.hpp"

namespace vlm3d {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0))
    throw std::invalid_argument("sigma_min must be > 0");
  if (!(sigma_max > sigma_min))
    throw std::invalid_argument("sigma_max must be > sigma_min");
}

double sigma_at(const NoiseSchedule& schedule, double t) {
  schedule.validate();
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("sigma: t must be in [0, 1]");
  return std::exp((1.0 - t) * std::log(schedule.sigma_min) +
                  t * std::log(schedule.sigma_max));
}

double weight_at(const NoiseSchedule& schedule, double t) {
  const double s = sigma_at(schedule, t);
  switch (schedule.weighting) {
    case Weighting::Constant:
      return 1.0;
    case Weighting::Sigma:
      return s;
    case Weighting::SigmaSquared:
      return s * s;
  }
  return 1.0;
}

DiffusedSample diffuse(const Image& image, const NoiseSchedule& schedule,
                       double t, std::uint64_t seed) {
  const double s = sigma_at(schedule, t);
  DiffusedSample out;
  out.t = t;
  out.epsilon = Image::make(image.width, image.height, image.channels);
  out.x_t = image;
  DetRng rng(mix_seed(seed, 0x6e6f697365ULL));
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const double e = rng.normal();
    out.epsilon.data[i] = e;
    out.x_t.data[i] = image.data[i] + s * e;
  }
  return out;
}

void ScoreModel::validate() const {
  switch (kind) {
    case Kind::PointMass:
      if (targets.empty())
        throw std::invalid_argument("point-mass model needs target images");
      break;
    case Kind::GaussianMixture: {
      if (mixture_means.empty() ||
          mixture_weights.size() != mixture_means.size())
        throw std::invalid_argument(
            "mixture model needs matching weights and mean images");
      double sum = 0.0;
      for (double w : mixture_weights) {
        if (!(w > 0.0))
          throw std::invalid_argument("mixture weights must be positive");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("mixture weights must sum to 1");
      if (data_variance < 0.0)
        throw std::invalid_argument("mixture data variance must be >= 0");
      break;
    }
    case Kind::Paired:
      if (!conditional || !unconditional)
        throw std::invalid_argument("paired model needs both halves");
      if (cfg_scale < 0.0)
        throw std::invalid_argument("cfg scale must be >= 0");
      conditional->validate();
      unconditional->validate();
      break;
  }
}

ScoreModel ScoreModel::point_mass(std::vector<Image> targets) {
  ScoreModel m;
  m.kind = Kind::PointMass;
  m.targets = std::move(targets);
  m.validate();
  return m;
}

ScoreModel ScoreModel::gaussian_mixture(std::vector<double> weights,
                                        std::vector<Image> means,
                                        double data_variance) {
  ScoreModel m;
  m.kind = Kind::GaussianMixture;
  m.mixture_weights = std::move(weights);
  m.mixture_means = std::move(means);
  m.data_variance = data_variance;
  m.validate();
  return m;
}

ScoreModel ScoreModel::paired(ScoreModel conditional, ScoreModel unconditional,
                              double cfg_scale) {
  ScoreModel m;
  m.kind = Kind::Paired;
  m.conditional = std::make_shared<ScoreModel>(std::move(conditional));
  m.unconditional = std::make_shared<ScoreModel>(std::move(unconditional));
  m.cfg_scale = cfg_scale;
  m.validate();
  return m;
}

std::vector<Image> mixture_responsibilities(const ScoreModel& model,
                                            const Image& x_t, double sigma) {
  const std::size_t m = model.mixture_means.size();
  const double var = model.data_variance + sigma * sigma;
  std::vector<Image> resp(m);
  for (std::size_t j = 0; j < m; ++j)
    resp[j] = Image::make(x_t.width, x_t.height, x_t.channels);
  std::vector<double> logit(m);
  for (std::size_t i = 0; i < x_t.data.size(); ++i) {
    double max_logit = -1e300;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = x_t.data[i] - model.mixture_means[j].data[i];
      logit[j] = std::log(model.mixture_weights[j]) - d * d / (2.0 * var);
      max_logit = std::max(max_logit, logit[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      logit[j] = std::exp(logit[j] - max_logit);
      denom += logit[j];
    }
    for (std::size_t j = 0; j < m; ++j) resp[j].data[i] = logit[j] / denom;
  }
  return resp;
}

Image score(const ScoreModel& model, const Image& x_t, double t,
            const NoiseSchedule& schedule, const PromptSpec& prompt,
            int view_index) {
  model.validate();
  if (!x_t.all_finite())
    throw std::invalid_argument("score: non-finite input image");
  const double s = sigma_at(schedule, t);

  switch (model.kind) {
    case ScoreModel::Kind::PointMass: {
      if (view_index < 0 ||
          view_index >= static_cast<int>(model.targets.size()))
        throw std::invalid_argument("score: view_index out of range");
      const Image& target = model.targets[view_index];
      if (!x_t.same_shape(target))
        throw std::invalid_argument("score: target shape mismatch");
      Image out = x_t;
      const double inv_var = 1.0 / (s * s);
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = -(x_t.data[i] - target.data[i]) * inv_var;
      return out;
    }
    case ScoreModel::Kind::GaussianMixture: {
      for (const Image& mean : model.mixture_means)
        if (!x_t.same_shape(mean))
          throw std::invalid_argument("score: mixture mean shape mismatch");
      const double var = model.data_variance + s * s;
      const std::vector<Image> resp =
          mixture_responsibilities(model, x_t, s);
      Image out = Image::make(x_t.width, x_t.height, x_t.channels);
      for (std::size_t j = 0; j < model.mixture_means.size(); ++j) {
        const Image& mean = model.mixture_means[j];
        for (std::size_t i = 0; i < out.data.size(); ++i)
          out.data[i] +=
              resp[j].data[i] * (-(x_t.data[i] - mean.data[i]) / var);
      }
      return out;
    }
    case ScoreModel::Kind::Paired: {
      const Image cond =
          score(*model.conditional, x_t, t, schedule, prompt, view_index);
      const Image uncond =
          score(*model.unconditional, x_t, t, schedule, prompt, view_index);
      return cfg_score(cond, uncond, model.cfg_scale);
    }
  }
  throw std::logic_error("unreachable score model kind");
}

Image cfg_score(const Image& cond_score, const Image& uncond_score,
                double scale) {
  if (!cond_score.same_shape(uncond_score))
    throw std::invalid_argument("cfg_score: shape mismatch");
  if (scale == 1.0) return cond_score;  // identity blend, exact
  Image out = uncond_score;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] += scale * (cond_score.data[i] - uncond_score.data[i]);
  return out;
}

namespace {

// Channel count the model's targets were built with; the prior scores that
// many leading channels of the render (rgb targets leave alpha free, rgba
// targets pin the silhouette too).
int model_channels(const ScoreModel& model) {
  switch (model.kind) {
    case ScoreModel::Kind::PointMass:
      return model.targets.front().channels;
    case ScoreModel::Kind::GaussianMixture:
      return model.mixture_means.front().channels;
    case ScoreModel::Kind::Paired:
      return model_channels(*model.conditional);
  }
  return 3;
}

}  // namespace

Image sds_residual(const Image& rendered_rgba, const ScoreModel& model,
                   const NoiseSchedule& schedule, double t, std::uint64_t seed,
                   const PromptSpec& prompt, int view_index) {
  if (rendered_rgba.channels != 4)
    throw std::invalid_argument("sds_residual expects an rgba render");
  model.validate();
  const int k = model_channels(model);
  if (k > rendered_rgba.channels)
    throw std::invalid_argument(
        "sds_residual: model targets have more channels than the render");
  Image x0 = Image::make(rendered_rgba.width, rendered_rgba.height, k);
  for (int y = 0; y < x0.height; ++y)
    for (int x = 0; x < x0.width; ++x)
      for (int c = 0; c < k; ++c) x0.at(x, y, c) = rendered_rgba.at(x, y, c);

  const double s = sigma_at(schedule, t);
  const double w = weight_at(schedule, t);
  const DiffusedSample noised = diffuse(x0, schedule, t, seed);
  const Image score_field =
      score(model, noised.x_t, t, schedule, prompt, view_index);

  Image upstream = Image::make(rendered_rgba.width, rendered_rgba.height, 4);
  const double inv_var = 1.0 / (s * s);
  for (int y = 0; y < x0.height; ++y)
    for (int x = 0; x < x0.width; ++x)
      for (int c = 0; c < k; ++c) {
        const std::size_t i =
            (static_cast<std::size_t>(y) * x0.width + x) * k + c;
        const double residual =
            w * (-s * s * score_field.data[i] - s * noised.epsilon.data[i]) *
            inv_var;
        upstream.at(x, y, c) = residual;
      }
  return upstream;
}

std::vector<double> sds_grad(const SceneGrid& scene, const Camera& camera,
                             const RenderConfig& config,
                             const ScoreModel& model,
                             const NoiseSchedule& schedule, double t,
                             std::uint64_t seed, const PromptSpec& prompt,
                             int view_index) {
  const ActivatedFields fields = activate(scene);
  const RenderTape tape = render_taped(fields, camera, config);
  const Image upstream = sds_residual(tape.image, model, schedule, t, seed,
                                      prompt, view_index);
  std::vector<double> grad_density(fields.res.voxels(), 0.0);
  std::vector<double> grad_color(3 * fields.res.voxels(), 0.0);
  render_vjp_fields(fields, camera, config, tape, upstream, grad_density,
                    grad_color);
  std::vector<double> raw_grad(scene.param_count(), 0.0);
  activation_chain(scene, fields, grad_density, grad_color, raw_grad);
  return raw_grad;
}

}  // namespace vlm3d
