#include "vlm3d/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vlm3d/rng.hpp"

namespace vlm3d {

void PromptSpec::validate() const {
  if (criteria.empty())
    throw std::invalid_argument("prompt needs at least one criterion");
  for (const auto& c : criteria) {
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight))
      throw std::invalid_argument("criterion weight must be finite and >= 0");
    if (const auto* cs = std::get_if<ContentSilhouetteCriterion>(&c.kind)) {
      if (!(cs->sharpness > 0.0))
        throw std::invalid_argument("content sharpness must be > 0");
    } else if (const auto* g =
                   std::get_if<GeometryConsistencyCriterion>(&c.kind)) {
      if (!(g->sharpness > 0.0))
        throw std::invalid_argument("geometry sharpness must be > 0");
    } else {
      const auto& probe = std::get<ConvProbeCriterion>(c.kind);
      for (int w : probe.widths)
        if (w < 1)
          throw std::invalid_argument("conv probe widths must be >= 1");
    }
  }
}

void ViewBatch::validate() const {
  if (views.empty())
    throw std::invalid_argument("view batch needs at least one view");
  for (const auto& v : views)
    if (!v.same_shape(views.front()))
      throw std::invalid_argument("all views must have the same shape");
}

int silhouette_channel(const Image& view) {
  if (view.channels == 4) return 3;
  if (view.channels == 1) return 0;
  throw std::invalid_argument(
      "silhouette criteria need rgba or grayscale views");
}

RewardOutput make_reward_output(double z_yes, double z_no) {
  RewardOutput out;
  out.z_yes = z_yes;
  out.z_no = z_no;
  out.reward = z_yes - z_no;
  const double m = std::max(z_yes, z_no);
  const double ey = std::exp(z_yes - m);
  const double en = std::exp(z_no - m);
  out.p_yes = ey / (ey + en);
  return out;
}

namespace {

double content_discrepancy_of(const ContentSilhouetteCriterion& c,
                              const ViewBatch& batch) {
  if (c.targets.size() != batch.views.size())
    throw std::invalid_argument(
        "content criterion needs one target per view");
  const std::size_t pixels = batch.views.front().pixel_count();
  double total = 0.0;
  for (std::size_t i = 0; i < batch.views.size(); ++i) {
    const Image& view = batch.views[i];
    const Image& target = c.targets[i];
    if (target.width != view.width || target.height != view.height ||
        target.channels != 1)
      throw std::invalid_argument(
          "content target must be grayscale with the view size");
    const int sc = silhouette_channel(view);
    double view_sum = 0.0;
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x) {
        const double d = view.at(x, y, sc) - target.at(x, y, 0);
        view_sum += d * d;
      }
    total += view_sum / static_cast<double>(pixels);
  }
  return total / static_cast<double>(batch.views.size());
}

// Population variance of the per-view silhouette area fractions.
double geometry_variance_of(const ViewBatch& batch,
                            std::vector<double>* areas_out) {
  const std::size_t n = batch.views.size();
  const std::size_t pixels = batch.views.front().pixel_count();
  std::vector<double> areas(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Image& view = batch.views[i];
    const int sc = silhouette_channel(view);
    double sum = 0.0;
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x) sum += view.at(x, y, sc);
    areas[i] = sum / static_cast<double>(pixels);
  }
  double mean = 0.0;
  for (double a : areas) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : areas) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  if (areas_out) *areas_out = std::move(areas);
  return var;
}

// --- conv probe ---------------------------------------------------------
// Channel-last tensors; the probe is a stack of 3x3 same-padded convolutions
// with tanh, a global mean pool, and a fixed linear head to two logits.

struct Tensor {
  int w = 0, h = 0, c = 0;
  std::vector<double> data;
  static Tensor make(int w, int h, int c) {
    Tensor t;
    t.w = w;
    t.h = h;
    t.c = c;
    t.data.assign(static_cast<std::size_t>(w) * h * c, 0.0);
    return t;
  }
  double& at(int x, int y, int ch) {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  double at(int x, int y, int ch) const {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

std::vector<double> conv_weights(std::uint64_t seed, int layer, int out_c,
                                 int in_c) {
  std::vector<double> w(static_cast<std::size_t>(out_c) * in_c * 9);
  DetRng rng(mix_seed(seed, 0x636f6e76ULL, static_cast<std::uint64_t>(layer)));
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_c) * 9.0);
  for (auto& v : w) v = rng.normal() * scale;
  return w;
}

Tensor conv3x3_tanh(const Tensor& in, const std::vector<double>& w,
                    int out_c) {
  Tensor out = Tensor::make(in.w, in.h, out_c);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int oc = 0; oc < out_c; ++oc) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= in.h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= in.w) continue;
            const std::size_t wbase =
                ((static_cast<std::size_t>(oc) * in.c) * 9) +
                (dy + 1) * 3 + (dx + 1);
            for (int ic = 0; ic < in.c; ++ic)
              acc += in.at(xx, yy, ic) *
                     w[wbase + static_cast<std::size_t>(ic) * 9];
          }
        }
        out.at(x, y, oc) = std::tanh(acc);
      }
  return out;
}

// Adjoint of conv3x3_tanh given the layer output (for tanh') and upstream.
Tensor conv3x3_tanh_vjp(const Tensor& in, const Tensor& out,
                        const std::vector<double>& w, const Tensor& up) {
  Tensor grad_in = Tensor::make(in.w, in.h, in.c);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int oc = 0; oc < out.c; ++oc) {
        const double o = out.at(x, y, oc);
        const double g = up.at(x, y, oc) * (1.0 - o * o);
        if (g == 0.0) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= in.h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= in.w) continue;
            const std::size_t wbase =
                ((static_cast<std::size_t>(oc) * in.c) * 9) +
                (dy + 1) * 3 + (dx + 1);
            for (int ic = 0; ic < in.c; ++ic)
              grad_in.at(xx, yy, ic) +=
                  g * w[wbase + static_cast<std::size_t>(ic) * 9];
          }
        }
      }
  return grad_in;
}

Tensor concat_views(const ViewBatch& batch) {
  const Image& first = batch.views.front();
  const int n = static_cast<int>(batch.views.size());
  Tensor t = Tensor::make(first.width, first.height,
                          n * first.channels);
  for (int i = 0; i < n; ++i) {
    const Image& v = batch.views[i];
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x)
        for (int c = 0; c < v.channels; ++c)
          t.at(x, y, i * v.channels + c) = v.at(x, y, c);
  }
  return t;
}

struct ProbeResult {
  double z_yes = 0.0;
  double z_no = 0.0;
  std::vector<Tensor> activations;  // input + each conv output
  std::vector<double> pooled;
};

std::vector<double> head_weights(std::uint64_t seed, int features) {
  std::vector<double> w(2 * static_cast<std::size_t>(features));
  DetRng rng(mix_seed(seed, 0x68656164ULL));
  const double scale = 1.0 / std::sqrt(static_cast<double>(features));
  for (auto& v : w) v = rng.normal() * scale;
  return w;
}

ProbeResult conv_probe_forward(const ConvProbeCriterion& probe,
                               const ViewBatch& batch) {
  ProbeResult r;
  r.activations.push_back(concat_views(batch));
  for (std::size_t l = 0; l < probe.widths.size(); ++l) {
    const Tensor& in = r.activations.back();
    const int out_c = probe.widths[l];
    const std::vector<double> w =
        conv_weights(probe.seed, static_cast<int>(l), out_c, in.c);
    r.activations.push_back(conv3x3_tanh(in, w, out_c));
  }
  const Tensor& last = r.activations.back();
  r.pooled.assign(last.c, 0.0);
  const double inv = 1.0 / (static_cast<double>(last.w) * last.h);
  for (int y = 0; y < last.h; ++y)
    for (int x = 0; x < last.w; ++x)
      for (int c = 0; c < last.c; ++c) r.pooled[c] += last.at(x, y, c) * inv;

  const std::vector<double> head = head_weights(probe.seed, last.c);
  for (int c = 0; c < last.c; ++c) {
    r.z_yes += head[c] * r.pooled[c];
    r.z_no += head[last.c + c] * r.pooled[c];
  }
  r.z_yes += probe.bias;
  r.z_no -= probe.bias;
  return r;
}

// Gradient of (u_yes * z_yes + u_no * z_no) with respect to each view.
std::vector<Image> conv_probe_vjp(const ConvProbeCriterion& probe,
                                  const ViewBatch& batch, double u_yes,
                                  double u_no) {
  ProbeResult fwd = conv_probe_forward(probe, batch);
  const Tensor& last = fwd.activations.back();
  const std::vector<double> head = head_weights(probe.seed, last.c);

  std::vector<double> grad_pooled(last.c, 0.0);
  for (int c = 0; c < last.c; ++c)
    grad_pooled[c] = u_yes * head[c] + u_no * head[last.c + c];

  Tensor grad = Tensor::make(last.w, last.h, last.c);
  const double inv = 1.0 / (static_cast<double>(last.w) * last.h);
  for (int y = 0; y < last.h; ++y)
    for (int x = 0; x < last.w; ++x)
      for (int c = 0; c < last.c; ++c)
        grad.at(x, y, c) = grad_pooled[c] * inv;

  for (std::size_t l = probe.widths.size(); l-- > 0;) {
    const Tensor& in = fwd.activations[l];
    const Tensor& out = fwd.activations[l + 1];
    const std::vector<double> w =
        conv_weights(probe.seed, static_cast<int>(l), out.c, in.c);
    grad = conv3x3_tanh_vjp(in, out, w, grad);
  }

  std::vector<Image> out;
  const int vc = batch.views.front().channels;
  for (std::size_t i = 0; i < batch.views.size(); ++i) {
    Image g = Image::make(grad.w, grad.h, vc);
    for (int y = 0; y < grad.h; ++y)
      for (int x = 0; x < grad.w; ++x)
        for (int c = 0; c < vc; ++c)
          g.at(x, y, c) = grad.at(x, y, static_cast<int>(i) * vc + c);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

CriterionLogits criterion_logits(const CriterionSpec& criterion,
                                 const ViewBatch& views) {
  views.validate();
  CriterionLogits out;
  if (const auto* cs =
          std::get_if<ContentSilhouetteCriterion>(&criterion.kind)) {
    const double d = content_discrepancy_of(*cs, views);
    out.z_yes = cs->sharpness * (cs->threshold - d);
    out.z_no = cs->sharpness * (d - cs->threshold);
    out.diagnostic = d;
  } else if (const auto* g =
                 std::get_if<GeometryConsistencyCriterion>(&criterion.kind)) {
    const double v = geometry_variance_of(views, nullptr);
    out.z_yes = g->sharpness * (g->tolerance - v);
    out.z_no = g->sharpness * (v - g->tolerance);
    out.diagnostic = v;
  } else {
    const auto& probe = std::get<ConvProbeCriterion>(criterion.kind);
    const ProbeResult r = conv_probe_forward(probe, views);
    out.z_yes = r.z_yes;
    out.z_no = r.z_no;
  }
  return out;
}

RewardBreakdown reward_detailed(const PromptSpec& prompt,
                                const ViewBatch& views) {
  prompt.validate();
  views.validate();
  RewardBreakdown out;
  double z_yes = 0.0, z_no = 0.0;
  double p_sum = 0.0;
  bool have_content = false, have_geometry = false;
  for (const auto& c : prompt.criteria) {
    const CriterionLogits logits = criterion_logits(c, views);
    out.per_criterion.push_back(logits);
    z_yes += c.weight * logits.z_yes;
    z_no += c.weight * logits.z_no;
    p_sum += make_reward_output(logits.z_yes, logits.z_no).p_yes;
    if (!have_content &&
        std::holds_alternative<ContentSilhouetteCriterion>(c.kind)) {
      out.content_discrepancy = logits.diagnostic;
      have_content = true;
    }
    if (!have_geometry &&
        std::holds_alternative<GeometryConsistencyCriterion>(c.kind)) {
      out.geometry_variance = logits.diagnostic;
      have_geometry = true;
    }
  }
  out.total = make_reward_output(z_yes, z_no);
  if (prompt.query_mode == QueryMode::Separate)
    out.total.p_yes = p_sum / static_cast<double>(prompt.criteria.size());
  return out;
}

RewardOutput reward(const PromptSpec& prompt, const ViewBatch& views) {
  return reward_detailed(prompt, views).total;
}

std::vector<Image> reward_vjp(const PromptSpec& prompt, const ViewBatch& views,
                              double upstream) {
  prompt.validate();
  views.validate();
  if (!std::isfinite(upstream))
    throw std::invalid_argument("reward_vjp: non-finite upstream");

  const std::size_t n = views.views.size();
  const Image& first = views.views.front();
  std::vector<Image> grads(n);
  for (std::size_t i = 0; i < n; ++i)
    grads[i] = Image::make(first.width, first.height, first.channels);
  if (upstream == 0.0) return grads;

  const double pixels = static_cast<double>(first.pixel_count());

  for (const auto& c : prompt.criteria) {
    const double u = upstream * c.weight;
    if (u == 0.0) continue;
    if (const auto* cs = std::get_if<ContentSilhouetteCriterion>(&c.kind)) {
      // reward term = 2k(tau - D); d/ds = -4k (s - s*) / (P N).
      content_discrepancy_of(*cs, views);  // validates targets
      const double coeff = -4.0 * cs->sharpness * u /
                           (pixels * static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const Image& view = views.views[i];
        const Image& target = cs->targets[i];
        const int sc = silhouette_channel(view);
        for (int y = 0; y < view.height; ++y)
          for (int x = 0; x < view.width; ++x)
            grads[i].at(x, y, sc) +=
                coeff * (view.at(x, y, sc) - target.at(x, y, 0));
      }
    } else if (const auto* g =
                   std::get_if<GeometryConsistencyCriterion>(&c.kind)) {
      // reward term = 2k(tau - V); dV/da_i = 2 (a_i - mean) / N.
      std::vector<double> areas;
      geometry_variance_of(views, &areas);
      double mean = 0.0;
      for (double a : areas) mean += a;
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Image& view = views.views[i];
        const int sc = silhouette_channel(view);
        const double coeff = -2.0 * g->sharpness * u * 2.0 *
                             (areas[i] - mean) /
                             (static_cast<double>(n) * pixels);
        for (int y = 0; y < view.height; ++y)
          for (int x = 0; x < view.width; ++x)
            grads[i].at(x, y, sc) += coeff;
      }
    } else {
      const auto& probe = std::get<ConvProbeCriterion>(c.kind);
      // reward term = z_yes - z_no with upstream u on the difference.
      const std::vector<Image> pg = conv_probe_vjp(probe, views, u, -u);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < grads[i].data.size(); ++j)
          grads[i].data[j] += pg[i].data[j];
    }
  }
  return grads;
}

}  // namespace vlm3d
