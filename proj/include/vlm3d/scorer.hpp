#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "vlm3d/image.hpp"
#include "vlm3d/scene.hpp"

namespace vlm3d {

// Content match: mean squared silhouette discrepancy D against per-view
// targets, mapped to logits z_yes = k(tau - D), z_no = k(D - tau).
struct ContentSilhouetteCriterion {
  std::vector<Image> targets;  // grayscale, one per view
  double sharpness = 1.0;      // k > 0
  double threshold = 0.05;     // tau
};

// Geometric quality: variance V of the per-view silhouette area fraction, a
// differentiable multi-face detector (wildly different silhouette areas
// across azimuths signal inconsistent geometry). z_yes = k(tau - V).
struct GeometryConsistencyCriterion {
  double sharpness = 1.0;   // k > 0
  double tolerance = 1e-3;  // tau
};

// A small seeded convolutional network over the channel-concatenated views,
// producing two logits. Keeps an opaque-network path through the reward for
// gradient-flow tests; the weights are fixed, never trained.
struct ConvProbeCriterion {
  std::uint64_t seed = 0;
  std::vector<int> widths = {4};
  double bias = 0.0;  // added to z_yes, subtracted from z_no
};

using CriterionKind =
    std::variant<ContentSilhouetteCriterion, GeometryConsistencyCriterion,
                 ConvProbeCriterion>;

struct CriterionSpec {
  CriterionKind kind;
  double weight = 1.0;
};

// How the per-criterion queries combine into the reported probability:
// Combined evaluates one softmax over the weighted logit sums, Separate
// averages per-criterion probabilities. The reward value and its gradient
// are identical either way (the aggregation is linear in the logits).
enum class QueryMode { Combined, Separate };

struct PromptSpec {
  std::string description_id;
  std::vector<CriterionSpec> criteria;
  QueryMode query_mode = QueryMode::Combined;

  void validate() const;
};

struct ViewBatch {
  std::vector<Image> views;
  std::vector<Camera> cameras;

  void validate() const;
};

struct RewardOutput {
  double z_yes = 0.0;
  double z_no = 0.0;
  double p_yes = 0.5;
  double reward = 0.0;
};

// Builds the output from logits: p_yes via a max-subtracted softmax,
// reward = z_yes - z_no exactly.
RewardOutput make_reward_output(double z_yes, double z_no);

struct CriterionLogits {
  double z_yes = 0.0;
  double z_no = 0.0;
  // D for content criteria, V for geometry, 0 for conv probes.
  double diagnostic = 0.0;
};

CriterionLogits criterion_logits(const CriterionSpec& criterion,
                                 const ViewBatch& views);

struct RewardBreakdown {
  RewardOutput total;
  std::vector<CriterionLogits> per_criterion;
  double content_discrepancy = 0.0;  // first content criterion's D
  double geometry_variance = 0.0;    // first geometry criterion's V
};

RewardBreakdown reward_detailed(const PromptSpec& prompt,
                                const ViewBatch& views);
RewardOutput reward(const PromptSpec& prompt, const ViewBatch& views);

// Exact adjoint of the reward with respect to every view's pixels, scaled by
// the scalar upstream. Returns one gradient image per view.
std::vector<Image> reward_vjp(const PromptSpec& prompt, const ViewBatch& views,
                              double upstream);

// Silhouette channel of a view: alpha for rgba images, the single channel
// for grayscale. rgb views have no silhouette and are rejected.
int silhouette_channel(const Image& view);

}  // namespace vlm3d
