#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "vlm3d/gradcheck.hpp"
#include "vlm3d/rng.hpp"
#include "vlm3d/scorer.hpp"

using namespace vlm3d;

namespace {

Camera dummy_camera(int size) {
  Camera cam;
  cam.position = {0.0, 2.5, 0.0};
  cam.target = {0.0, 0.0, 0.0};
  cam.width = size;
  cam.height = size;
  return cam;
}

ViewBatch make_batch(const std::vector<Image>& views) {
  ViewBatch batch;
  batch.views = views;
  for (std::size_t i = 0; i < views.size(); ++i)
    batch.cameras.push_back(dummy_camera(views[i].width));
  return batch;
}

Image rgba_with_alpha(int size, double alpha) {
  Image img = Image::make(size, size, 4, 0.5);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) img.at(x, y, 3) = alpha;
  return img;
}

Image random_rgba(int size, std::uint64_t seed) {
  Image img = Image::make(size, size, 4);
  DetRng rng(seed);
  for (auto& v : img.data) v = rng.uniform(0.05, 0.95);
  return img;
}

std::vector<double> flatten(const std::vector<Image>& images) {
  std::vector<double> flat;
  for (const Image& i : images)
    flat.insert(flat.end(), i.data.begin(), i.data.end());
  return flat;
}

}  // namespace

TEST_CASE("content criterion at its threshold gives zero logits") {
  const int n = 2, size = 4;
  const double alpha = 0.7, target = 0.4;
  std::vector<Image> views(n, rgba_with_alpha(size, alpha));
  ContentSilhouetteCriterion c;
  c.sharpness = 3.0;
  for (int i = 0; i < n; ++i)
    c.targets.push_back(Image::make(size, size, 1, target));
  CriterionSpec spec;
  spec.kind = c;
  // Pin the threshold to the criterion's own measured discrepancy.
  const double d =
      criterion_logits(spec, make_batch(views)).diagnostic;
  CHECK(d == doctest::Approx((alpha - target) * (alpha - target))
                 .epsilon(1e-12));
  std::get<ContentSilhouetteCriterion>(spec.kind).threshold = d;
  const CriterionLogits out = criterion_logits(spec, make_batch(views));
  CHECK(out.z_yes == 0.0);
  CHECK(out.z_no == 0.0);
}

TEST_CASE("content criterion with a perfect match evaluates the formula") {
  const int size = 3;
  std::vector<Image> views{rgba_with_alpha(size, 0.6)};
  ContentSilhouetteCriterion c;
  c.sharpness = 1.0;
  c.threshold = 0.1;
  c.targets.push_back(Image::make(size, size, 1, 0.6));
  CriterionSpec spec;
  spec.kind = c;
  const CriterionLogits out = criterion_logits(spec, make_batch(views));
  CHECK(out.z_yes == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(out.z_no == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("identical views have zero cross-view variance") {
  std::vector<Image> views(4, random_rgba(5, 42));
  GeometryConsistencyCriterion g;
  g.sharpness = 7.0;
  g.tolerance = 1e-3;
  CriterionSpec spec;
  spec.kind = g;
  const CriterionLogits out = criterion_logits(spec, make_batch(views));
  CHECK(out.z_yes == doctest::Approx(7.0 * 1e-3).epsilon(1e-12));
  CHECK(out.diagnostic == 0.0);
}

TEST_CASE("permuting identical views leaves the logits unchanged") {
  const Image a = random_rgba(5, 1), b = random_rgba(5, 2),
              c = random_rgba(5, 3);
  GeometryConsistencyCriterion g;
  CriterionSpec spec;
  spec.kind = g;
  // Identical multisets of views in different orders.
  const CriterionLogits fwd =
      criterion_logits(spec, make_batch({a, b, c, a, b, c}));
  const CriterionLogits rev =
      criterion_logits(spec, make_batch({c, b, a, c, b, a}));
  CHECK(fwd.z_yes == doctest::Approx(rev.z_yes).epsilon(1e-13));
  CHECK(fwd.z_no == doctest::Approx(rev.z_no).epsilon(1e-13));
}

TEST_CASE("a single criterion's reward is its logit difference") {
  std::vector<Image> views{rgba_with_alpha(4, 0.8)};
  PromptSpec prompt;
  prompt.description_id = "single";
  ContentSilhouetteCriterion c;
  c.sharpness = 2.0;
  c.threshold = 0.05;
  c.targets.push_back(Image::make(4, 4, 1, 0.3));
  CriterionSpec spec;
  spec.kind = c;
  prompt.criteria.push_back(spec);

  const CriterionLogits logits =
      criterion_logits(prompt.criteria[0], make_batch(views));
  const RewardOutput out = reward(prompt, make_batch(views));
  CHECK(out.reward == logits.z_yes - logits.z_no);
}

TEST_CASE("weighted criteria aggregate to the documented example") {
  // Two content criteria engineered to produce logits (1,-1) and (2,-2).
  std::vector<Image> views{rgba_with_alpha(1, 1.0)};
  auto criterion = [&](double sharpness, double threshold) {
    ContentSilhouetteCriterion c;
    c.sharpness = sharpness;
    c.threshold = threshold;
    c.targets.push_back(Image::make(1, 1, 1, 0.0));  // D = 1
    CriterionSpec spec;
    spec.kind = c;
    spec.weight = 1.0;
    return spec;
  };
  PromptSpec prompt;
  prompt.description_id = "pair";
  prompt.criteria.push_back(criterion(1.0, 2.0));  // z = (1, -1)
  prompt.criteria.push_back(criterion(2.0, 2.0));  // z = (2, -2)
  const RewardOutput out = reward(prompt, make_batch(views));
  CHECK(out.z_yes == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out.z_no == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(out.reward == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("symmetric logits give even odds and zero reward") {
  const RewardOutput out = make_reward_output(0.0, 0.0);
  CHECK(out.p_yes == 0.5);
  CHECK(out.reward == 0.0);
}

TEST_CASE("reward output identities hold under stress magnitudes") {
  DetRng rng(2024);
  for (int i = 0; i < 20000; ++i) {
    const double scale = std::pow(10.0, rng.uniform(-2.0, 4.0));
    const double z_yes = rng.uniform(-1.0, 1.0) * scale;
    const double z_no = rng.uniform(-1.0, 1.0) * scale;
    const RewardOutput out = make_reward_output(z_yes, z_no);

    CHECK(out.reward == z_yes - z_no);  // exact by construction
    const double p_no = 1.0 - out.p_yes;
    CHECK(std::abs(out.p_yes + p_no - 1.0) <= 1e-12);

    const double c = rng.uniform(-1.0, 1.0) * scale;
    const RewardOutput shifted = make_reward_output(z_yes + c, z_no + c);
    const double tol =
        1e-12 * std::max({1.0, std::abs(z_yes), std::abs(z_no), std::abs(c)});
    CHECK(std::abs(shifted.reward - out.reward) <= tol);
    CHECK(std::abs(shifted.p_yes - out.p_yes) <= 1e-12);

    // Antisymmetry under swapping the logits.
    const RewardOutput swapped = make_reward_output(z_no, z_yes);
    CHECK(swapped.reward == -out.reward);
  }
}

TEST_CASE("p_yes is monotone in the reward") {
  DetRng rng(7);
  std::vector<RewardOutput> outs;
  for (int i = 0; i < 500; ++i)
    outs.push_back(
        make_reward_output(rng.uniform(-20, 20), rng.uniform(-20, 20)));
  for (std::size_t i = 0; i < outs.size(); ++i)
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      if (outs[i].reward < outs[j].reward)
        CHECK(outs[i].p_yes <= outs[j].p_yes);
      if (outs[i].reward > outs[j].reward)
        CHECK(outs[i].p_yes >= outs[j].p_yes);
    }
}

TEST_CASE("decreasing the content discrepancy raises the reward") {
  PromptSpec prompt;
  prompt.description_id = "mono";
  ContentSilhouetteCriterion c;
  c.sharpness = 4.0;
  c.threshold = 0.02;
  c.targets.push_back(Image::make(3, 3, 1, 0.5));
  CriterionSpec spec;
  spec.kind = c;
  prompt.criteria.push_back(spec);

  double prev_reward = -1e300;
  for (double alpha : {0.9, 0.8, 0.7, 0.6, 0.55}) {  // D decreasing
    const RewardOutput out =
        reward(prompt, make_batch({rgba_with_alpha(3, alpha)}));
    CHECK(out.reward > prev_reward);
    prev_reward = out.reward;
  }
}

TEST_CASE("zero upstream produces all-zero view gradients") {
  PromptSpec prompt;
  prompt.description_id = "zero";
  GeometryConsistencyCriterion g;
  CriterionSpec spec;
  spec.kind = g;
  prompt.criteria.push_back(spec);
  const ViewBatch batch = make_batch({random_rgba(4, 5), random_rgba(4, 6)});
  const std::vector<Image> grads = reward_vjp(prompt, batch, 0.0);
  for (const Image& g_img : grads)
    for (double v : g_img.data) CHECK(v == 0.0);
}

TEST_CASE("content gradient matches the hand-differentiated closed form") {
  const int n = 3, size = 5;
  std::vector<Image> views;
  ContentSilhouetteCriterion c;
  c.sharpness = 2.5;
  c.threshold = 0.04;
  for (int i = 0; i < n; ++i) {
    views.push_back(random_rgba(size, 100 + i));
    Image t = Image::make(size, size, 1);
    DetRng rng(200 + i);
    for (auto& v : t.data) v = rng.uniform(0, 1);
    c.targets.push_back(t);
  }
  PromptSpec prompt;
  prompt.description_id = "closed-form";
  CriterionSpec spec;
  spec.kind = c;
  prompt.criteria.push_back(spec);

  const ViewBatch batch = make_batch(views);
  const std::vector<Image> grads = reward_vjp(prompt, batch, 1.0);
  const double pixels = static_cast<double>(size) * size;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double s = views[i].at(x, y, 3);
        const double t = c.targets[i].at(x, y, 0);
        const double expected = -2.0 * c.sharpness * 2.0 * (s - t) /
                                (pixels * static_cast<double>(n));
        CHECK(grads[i].at(x, y, 3) ==
              doctest::Approx(expected).epsilon(1e-12));
        CHECK(grads[i].at(x, y, 0) == 0.0);  // rgb untouched
      }
}

TEST_CASE("composite prompt passes finite-difference checks") {
  const int n = 3, size = 8;
  std::vector<Image> base_views;
  for (int i = 0; i < n; ++i) base_views.push_back(random_rgba(size, 300 + i));

  PromptSpec prompt;
  prompt.description_id = "composite";
  {
    ContentSilhouetteCriterion c;
    c.sharpness = 3.0;
    c.threshold = 0.05;
    for (int i = 0; i < n; ++i) {
      Image t = Image::make(size, size, 1);
      DetRng rng(400 + i);
      for (auto& v : t.data) v = rng.uniform(0, 1);
      c.targets.push_back(t);
    }
    CriterionSpec spec;
    spec.kind = c;
    spec.weight = 1.5;
    prompt.criteria.push_back(spec);
  }
  {
    GeometryConsistencyCriterion g;
    g.sharpness = 10.0;
    CriterionSpec spec;
    spec.kind = g;
    spec.weight = 0.7;
    prompt.criteria.push_back(spec);
  }
  {
    ConvProbeCriterion p;
    p.seed = 11;
    p.widths = {4, 3};
    p.bias = 0.2;
    CriterionSpec spec;
    spec.kind = p;
    spec.weight = 0.4;
    prompt.criteria.push_back(spec);
  }

  const ViewBatch base = make_batch(base_views);
  auto forward = [&](const std::vector<double>& p) {
    ViewBatch b = base;
    std::size_t at = 0;
    for (Image& v : b.views) {
      std::copy(p.begin() + at, p.begin() + at + v.data.size(),
                v.data.begin());
      at += v.data.size();
    }
    return std::vector<double>{reward(prompt, b).reward};
  };
  auto adjoint = [&](const std::vector<double>& p,
                     const std::vector<double>& u) {
    ViewBatch b = base;
    std::size_t at = 0;
    for (Image& v : b.views) {
      std::copy(p.begin() + at, p.begin() + at + v.data.size(),
                v.data.begin());
      at += v.data.size();
    }
    return flatten(reward_vjp(prompt, b, u[0]));
  };
  const GradCheckReport r =
      check_vjp(forward, adjoint, flatten(base_views), 20, 1e-6, 1e-4, 500);
  CHECK(r.passed);
}

TEST_CASE("content criterion requires one target per view") {
  PromptSpec prompt;
  prompt.description_id = "mismatch";
  ContentSilhouetteCriterion c;
  c.targets.push_back(Image::make(4, 4, 1, 0.5));
  CriterionSpec spec;
  spec.kind = c;
  prompt.criteria.push_back(spec);
  const ViewBatch batch = make_batch({random_rgba(4, 1), random_rgba(4, 2)});
  CHECK_THROWS_AS(reward(prompt, batch), std::invalid_argument);
}

TEST_CASE("rgb views have no silhouette channel") {
  Image rgb = Image::make(4, 4, 3, 0.5);
  CHECK_THROWS_AS(silhouette_channel(rgb), std::invalid_argument);
  CHECK(silhouette_channel(Image::make(4, 4, 4, 0.0)) == 3);
  CHECK(silhouette_channel(Image::make(4, 4, 1, 0.0)) == 0);
}

TEST_CASE("empty batches and empty prompts are rejected") {
  PromptSpec prompt;
  prompt.description_id = "empty";
  CHECK_THROWS_AS(prompt.validate(), std::invalid_argument);

  ViewBatch batch;
  CHECK_THROWS_AS(batch.validate(), std::invalid_argument);
}

TEST_CASE("separate query mode averages per-criterion probabilities") {
  std::vector<Image> views{rgba_with_alpha(2, 0.5)};
  PromptSpec prompt;
  prompt.description_id = "modes";
  {
    ContentSilhouetteCriterion c;
    c.sharpness = 1.0;
    c.threshold = 1.0;  // strongly satisfied
    c.targets.push_back(Image::make(2, 2, 1, 0.5));
    CriterionSpec spec;
    spec.kind = c;
    prompt.criteria.push_back(spec);
  }
  {
    GeometryConsistencyCriterion g;
    g.sharpness = 1.0;
    g.tolerance = -1.0;  // strongly violated
    CriterionSpec spec;
    spec.kind = g;
    prompt.criteria.push_back(spec);
  }
  prompt.query_mode = QueryMode::Combined;
  const RewardOutput combined = reward(prompt, make_batch(views));
  prompt.query_mode = QueryMode::Separate;
  const RewardOutput separate = reward(prompt, make_batch(views));
  // The reward is the same linear aggregate either way.
  CHECK(combined.reward == separate.reward);
  // Combined softmax saturates near 0.5 (logits cancel); the separate mean
  // averages one confident yes and one confident no.
  CHECK(combined.p_yes == doctest::Approx(0.5).epsilon(1e-9));
  const double p1 = make_reward_output(1.0, -1.0).p_yes;
  const double p2 = make_reward_output(-1.0, 1.0).p_yes;
  CHECK(separate.p_yes == doctest::Approx(0.5 * (p1 + p2)).epsilon(1e-12));
}
