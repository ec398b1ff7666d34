#include "vlm3d/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "vlm3d/arena.hpp"
#include "vlm3d/fixtures.hpp"
#include "vlm3d/rng.hpp"

namespace vlm3d {

namespace fs = std::filesystem;

namespace {

std::vector<double> flatten_images(const std::vector<Image>& images) {
  std::vector<double> flat;
  for (const Image& img : images)
    flat.insert(flat.end(), img.data.begin(), img.data.end());
  return flat;
}

void unflatten_images(const std::vector<double>& flat,
                      std::vector<Image>& images) {
  std::size_t at = 0;
  for (Image& img : images) {
    std::copy(flat.begin() + at, flat.begin() + at + img.data.size(),
              img.data.begin());
    at += img.data.size();
  }
}

Image random_image(int w, int h, int c, DetRng& rng, double lo = 0.0,
                   double hi = 1.0) {
  Image img = Image::make(w, h, c);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

Camera test_camera(double azimuth, int size) {
  Camera cam;
  cam.position = {2.5 * std::cos(azimuth), 2.5 * std::sin(azimuth), 0.9};
  cam.target = {0.0, 0.0, 0.0};
  cam.vertical_fov = deg_to_rad(40.0);
  cam.width = size;
  cam.height = size;
  return cam;
}

GradCheckReport merge_worst(const GradCheckReport& a,
                            const GradCheckReport& b) {
  GradCheckReport out = a.max_relative_error >= b.max_relative_error ? a : b;
  out.num_points = a.num_points + b.num_points;
  out.passed = a.passed && b.passed;
  return out;
}

GradcheckCase check_renderer(std::uint64_t seed, int points) {
  const int instances = 10;
  const int probes = std::max(1, points / instances);
  GradCheckReport worst;
  worst.passed = true;
  for (int inst = 0; inst < instances; ++inst) {
    const std::uint64_t s = mix_seed(seed, 0x72656e64ULL, inst);
    const SceneGrid base = make_random_scene(
        {8, 8, 8}, {{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}}, s);
    const Camera cam = test_camera(0.3 + 0.7 * inst, 12);
    RenderConfig cfg;
    cfg.samples_per_ray = 16;
    cfg.near = 1.2;
    cfg.far = 3.8;

    auto forward = [&](const std::vector<double>& p) {
      SceneGrid scene = base;
      scene.set_parameters(p);
      return render(scene, cam, cfg).data;
    };
    auto adjoint = [&](const std::vector<double>& p,
                       const std::vector<double>& u) {
      SceneGrid scene = base;
      scene.set_parameters(p);
      Image up = Image::make(cam.width, cam.height, 4);
      up.data = u;
      return render_vjp(scene, cam, cfg, up);
    };
    const GradCheckReport r = check_vjp(forward, adjoint, base.parameters(),
                                        probes, 1e-5, 1e-4, mix_seed(s, 1));
    worst = inst == 0 ? r : merge_worst(worst, r);
  }
  return {"renderer.render_vjp", worst, 1e-4};
}

GradcheckCase check_preprocess(std::uint64_t seed, int points) {
  const int instances = 10;
  const int probes = std::max(1, points / instances);
  GradCheckReport worst;
  worst.passed = true;
  for (int inst = 0; inst < instances; ++inst) {
    DetRng rng(mix_seed(seed, 0x70726570ULL, inst));
    PreprocChain chain;
    chain.stages.push_back(ResizeStage{9, 7});
    chain.stages.push_back(CropOrPadStage{12, 5, 0.25});
    NormalizeStage norm;
    for (int c = 0; c < 4; ++c) {
      norm.mean.push_back(rng.uniform(-0.2, 0.6));
      norm.scale.push_back(rng.uniform(0.4, 1.6));
    }
    chain.stages.push_back(norm);
    const Image base = random_image(16, 13, 4, rng, -0.5, 1.5);

    auto forward = [&](const std::vector<double>& p) {
      Image img = base;
      img.data = p;
      return preproc_apply(chain, img).data;
    };
    auto adjoint = [&](const std::vector<double>& p,
                       const std::vector<double>& u) {
      Image img = base;
      img.data = p;
      const ImageShape out_shape =
          chain_output_shape(chain, {img.width, img.height, img.channels});
      Image up = Image::make(out_shape.width, out_shape.height,
                             out_shape.channels);
      up.data = u;
      return preproc_vjp(chain, img, up).data;
    };
    const GradCheckReport r =
        check_vjp(forward, adjoint, base.data, probes, 1e-6, 1e-5,
                  mix_seed(seed, 0x70726570ULL, inst, 1));
    worst = inst == 0 ? r : merge_worst(worst, r);
  }
  return {"preprocess.apply_vjp", worst, 1e-5};
}

GradcheckCase check_scorer_kind(const std::string& kind, std::uint64_t seed,
                                int points) {
  const int instances = 10;
  const int probes = std::max(1, points / instances);
  GradCheckReport worst;
  worst.passed = true;
  for (int inst = 0; inst < instances; ++inst) {
    DetRng rng(mix_seed(seed, 0x73636f72ULL, inst));
    const int n_views = 3, size = 10;
    ViewBatch batch;
    for (int i = 0; i < n_views; ++i) {
      batch.views.push_back(random_image(size, size, 4, rng, 0.05, 0.95));
      batch.cameras.push_back(test_camera(0.5 * i, size));
    }

    PromptSpec prompt;
    prompt.description_id = "gradcheck";
    CriterionSpec spec;
    spec.weight = 1.0;
    if (kind == "content-silhouette") {
      ContentSilhouetteCriterion c;
      c.sharpness = 3.0;
      c.threshold = 0.05;
      for (int i = 0; i < n_views; ++i)
        c.targets.push_back(random_image(size, size, 1, rng));
      spec.kind = std::move(c);
    } else if (kind == "geometry-consistency") {
      GeometryConsistencyCriterion g;
      g.sharpness = 5.0;
      g.tolerance = 1e-3;
      spec.kind = g;
    } else {
      ConvProbeCriterion p;
      p.seed = mix_seed(seed, inst);
      p.widths = {3};
      p.bias = 0.1;
      spec.kind = p;
    }
    prompt.criteria.push_back(std::move(spec));

    auto forward = [&](const std::vector<double>& p) {
      ViewBatch b = batch;
      unflatten_images(p, b.views);
      return std::vector<double>{reward(prompt, b).reward};
    };
    auto adjoint = [&](const std::vector<double>& p,
                       const std::vector<double>& u) {
      ViewBatch b = batch;
      unflatten_images(p, b.views);
      return flatten_images(reward_vjp(prompt, b, u[0]));
    };
    const GradCheckReport r =
        check_vjp(forward, adjoint, flatten_images(batch.views), probes, 1e-6,
                  1e-4, mix_seed(seed, 0x73636f72ULL, inst, 2));
    worst = inst == 0 ? r : merge_worst(worst, r);
  }
  return {"scorer.reward_vjp[" + kind + "]", worst, 1e-4};
}

GradcheckCase check_orientation(std::uint64_t seed, int points) {
  const int instances = 10;
  const int probes = std::max(1, points / instances);
  GradCheckReport worst;
  worst.passed = true;
  for (int inst = 0; inst < instances; ++inst) {
    const std::uint64_t s = mix_seed(seed, 0x6f72696eULL, inst);
    SceneGrid base = make_sphere_scene(
        {10, 10, 10}, {{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}}, 0.3);
    // Perturb so normals are not exactly radial.
    DetRng rng(s);
    for (auto& d : base.raw_density) d += 0.15 * rng.normal();
    const std::vector<Camera> cams = {test_camera(0.4 + 0.6 * inst, 8),
                                      test_camera(2.5 + 0.6 * inst, 8)};
    RenderConfig cfg;
    cfg.samples_per_ray = 16;
    cfg.near = 1.2;
    cfg.far = 3.8;

    auto forward = [&](const std::vector<double>& p) {
      SceneGrid scene = base;
      scene.set_parameters(p);
      return std::vector<double>{orientation_penalty(scene, cams, cfg)};
    };
    auto adjoint = [&](const std::vector<double>& p,
                       const std::vector<double>& u) {
      SceneGrid scene = base;
      scene.set_parameters(p);
      std::vector<double> g = orientation_reg_grad(scene, cams, cfg);
      for (double& v : g) v *= u[0];
      return g;
    };
    const GradCheckReport r = check_vjp(forward, adjoint, base.parameters(),
                                        probes, 1e-5, 1e-3, mix_seed(s, 3));
    worst = inst == 0 ? r : merge_worst(worst, r);
  }
  return {"distill.orientation_reg_grad", worst, 1e-3};
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const std::string& selector,
                                               std::uint64_t seed,
                                               int points_per_op) {
  std::vector<GradcheckCase> cases;
  const bool all = selector == "all";
  if (all || selector == "renderer")
    cases.push_back(check_renderer(seed, points_per_op));
  if (all || selector == "preprocess")
    cases.push_back(check_preprocess(seed, points_per_op));
  if (all || selector == "scorer") {
    cases.push_back(
        check_scorer_kind("content-silhouette", seed, points_per_op));
    cases.push_back(
        check_scorer_kind("geometry-consistency", seed, points_per_op));
    cases.push_back(check_scorer_kind("conv-probe", seed, points_per_op));
  }
  if (all || selector == "orientation")
    cases.push_back(check_orientation(seed, points_per_op));
  if (cases.empty())
    throw ConfigError("unknown gradcheck selector '" + selector +
                      "' (expected renderer, preprocess, scorer, orientation "
                      "or all)");
  return cases;
}

EvalMetrics evaluate_scene(const SceneGrid& scene, const RunConfig& config) {
  const DistillContext& ctx = config.context;
  ViewSampler sampler = ctx.views;
  sampler.seed = config.seed;
  const std::vector<Camera> cams = sample_cameras(
      sampler, scene.bounds.center(), ctx.vertical_fov, ctx.image_width,
      ctx.image_height, config.distill.total_steps);

  const ActivatedFields fields = activate(scene);
  ViewBatch batch;
  batch.cameras = cams;
  for (const Camera& cam : cams)
    batch.views.push_back(
        preproc_apply(ctx.preprocess, render(fields, cam, ctx.render)));

  const RewardBreakdown breakdown = reward_detailed(ctx.prompt, batch);

  EvalMetrics out;
  out.content_discrepancy = breakdown.content_discrepancy;
  out.geometry_variance = breakdown.geometry_variance;

  const ContentSilhouetteCriterion* content = nullptr;
  for (const auto& c : ctx.prompt.criteria)
    if (const auto* cs = std::get_if<ContentSilhouetteCriterion>(&c.kind)) {
      content = cs;
      break;
    }
  if (!content || content->targets.size() != batch.views.size()) {
    out.iou = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < batch.views.size(); ++i) {
    const Image& view = batch.views[i];
    const Image& target = content->targets[i];
    const int sc = silhouette_channel(view);
    std::int64_t inter = 0, uni = 0;
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x) {
        const bool a = view.at(x, y, sc) > 0.5;
        const bool b = target.at(x, y, 0) > 0.5;
        inter += a && b;
        uni += a || b;
      }
    iou_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  out.iou = iou_sum / static_cast<double>(batch.views.size());
  return out;
}

std::vector<std::string> audit_run_dir(const std::string& dir) {
  std::vector<std::string> missing;
  if (!fs::exists(dir + "/config.json")) missing.push_back("config.json");
  if (!fs::exists(dir + "/metrics.jsonl")) missing.push_back("metrics.jsonl");
  if (!fs::exists(dir + "/checkpoint_final.ckpt"))
    missing.push_back("checkpoint_final.ckpt");
  if (!fs::exists(dir + "/renders") || fs::is_empty(dir + "/renders"))
    missing.push_back("renders/");
  return missing;
}

namespace {

struct LoadedConfig {
  nlohmann::ordered_json doc;
  RunConfig config;
};

LoadedConfig load_with_overrides(const std::string& config_path,
                                 const std::vector<std::string>& overrides,
                                 const std::string& out_dir_override,
                                 std::optional<std::uint64_t> seed_override) {
  std::ifstream is(config_path);
  if (!is) throw ConfigError("cannot open config: " + config_path);
  LoadedConfig lc;
  try {
    lc.doc = nlohmann::ordered_json::parse(is);
  } catch (const std::exception& e) {
    throw ConfigError(config_path + ": " + e.what());
  }
  for (const auto& ov : overrides) apply_override(lc.doc, ov);
  if (!out_dir_override.empty()) lc.doc["out_dir"] = out_dir_override;
  if (seed_override) lc.doc["seed"] = *seed_override;
  lc.config = parse_run_config(lc.doc,
                               fs::path(config_path).parent_path().string());
  return lc;
}

void write_snapshot(const std::string& out_dir,
                    const nlohmann::ordered_json& doc) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/config.json", std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot write config snapshot in " + out_dir);
  os << doc.dump(2) << "\n";
}

std::string format_eval(const EvalMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "content_D=%.6g geometry_V=%.6g iou=%.4f",
                m.content_discrepancy, m.geometry_variance, m.iou);
  return buf;
}

}  // namespace

int cmd_distill(const std::string& config_path,
                const std::vector<std::string>& overrides,
                const std::string& out_dir_override,
                std::optional<std::uint64_t> seed_override, std::ostream& out,
                std::ostream& err) {
  LoadedConfig lc;
  try {
    lc = load_with_overrides(config_path, overrides, out_dir_override,
                             seed_override);
    if (lc.config.out_dir.empty())
      throw ConfigError("out_dir: missing (set in config or pass --out)");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    const auto start = std::chrono::steady_clock::now();
    write_snapshot(lc.config.out_dir, lc.doc);
    SceneGrid scene = build_initial_scene(lc.config);
    const RunState state = distill_run(std::move(scene), lc.config.distill,
                                       lc.config.context, lc.config.out_dir);
    const auto missing = audit_run_dir(lc.config.out_dir);
    if (!missing.empty()) {
      err << "run directory audit failed; missing:";
      for (const auto& m : missing) err << " " << m;
      err << "\n";
      return kExitFailure;
    }
    const EvalMetrics eval = evaluate_scene(state.scene, lc.config);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    const double final_reward =
        state.metrics.empty() ? 0.0 : state.metrics.back().reward;
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "distill done: steps=%lld final_reward=%.6g iou=%.4f "
                  "wall=%.1fs out=%s",
                  static_cast<long long>(state.step), final_reward, eval.iou,
                  wall, lc.config.out_dir.c_str());
    out << buf << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_gradcheck(const std::string& selector, std::uint64_t seed,
                  std::ostream& out, std::ostream& err) {
  std::vector<GradcheckCase> cases;
  try {
    cases = run_gradcheck_suite(selector, seed);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfigError;
  }
  bool all_passed = true;
  for (const auto& c : cases) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-40s max_rel_err=%.3e tol=%.0e %s",
                  c.name.c_str(), c.report.max_relative_error, c.tolerance,
                  c.report.passed ? "PASS" : "FAIL");
    out << buf << "\n";
    all_passed = all_passed && c.report.passed;
  }
  return all_passed ? kExitOk : kExitFailure;
}

int cmd_arena(const std::string& records_path, const std::string& method,
              const std::string& anchor, double k_factor,
              const std::string& out_csv,
              const std::vector<std::string>& declared_methods,
              std::ostream& out, std::ostream& err) {
  if (method != "elo" && method != "bt") {
    err << "usage error: method must be 'elo' or 'bt'\n";
    return kExitConfigError;
  }
  std::vector<MatchRecord> records;
  try {
    records = load_match_records(records_path);
  } catch (const std::exception& e) {
    err << "records error: " << e.what() << "\n";
    return kExitConfigError;
  }
  RatingTable table;
  try {
    table = method == "elo"
                ? elo_online(records, anchor, k_factor, 1000.0,
                             declared_methods)
                : bradley_terry_mle(records, anchor, declared_methods);
  } catch (const std::exception& e) {
    err << "arena error: " << e.what() << "\n";
    return kExitConfigError;
  }
  try {
    save_rating_csv(out_csv, table);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  // Methods sorted by mean rating across metrics.
  const std::vector<std::string> metrics = table.metrics();
  std::map<std::string, double> mean_rating;
  for (const auto& method_name : table.methods()) {
    double sum = 0.0;
    int count = 0;
    for (const auto& metric : metrics) {
      const auto& row = table.ratings.at(metric);
      if (auto it = row.find(method_name); it != row.end()) {
        sum += it->second;
        ++count;
      }
    }
    mean_rating[method_name] = count ? sum / count : 0.0;
  }
  std::vector<std::string> order = table.methods();
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) {
                     if (mean_rating[a] != mean_rating[b])
                       return mean_rating[a] > mean_rating[b];
                     return a < b;
                   });
  out << "method";
  for (const auto& metric : metrics) out << "," << metric;
  out << "\n";
  for (const auto& m : order) {
    out << m;
    for (const auto& metric : metrics) {
      const auto& row = table.ratings.at(metric);
      char buf[32];
      if (auto it = row.find(m); it != row.end())
        std::snprintf(buf, sizeof(buf), "%.1f", it->second);
      else
        std::snprintf(buf, sizeof(buf), "-");
      out << "," << buf;
    }
    out << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::vector<std::string>& overrides,
               const std::string& out_dir_override,
               std::optional<std::uint64_t> seed_override, std::ostream& out,
               std::ostream& err) {
  if (axis != "geometry-query" && axis != "single-view") {
    err << "usage error: axis must be 'geometry-query' or 'single-view'\n";
    return kExitConfigError;
  }
  LoadedConfig lc;
  try {
    lc = load_with_overrides(config_path, overrides, out_dir_override,
                             seed_override);
    if (lc.config.out_dir.empty())
      throw ConfigError("out_dir: missing (set in config or pass --out)");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }

  // Ablated context: drop the geometry query, or truncate the scorer input
  // to a single view (content targets truncated to match).
  DistillContext ablated = lc.config.context;
  if (axis == "geometry-query") {
    std::vector<CriterionSpec> kept;
    for (const auto& c : ablated.prompt.criteria)
      if (!std::holds_alternative<GeometryConsistencyCriterion>(c.kind))
        kept.push_back(c);
    if (kept.size() == ablated.prompt.criteria.size()) {
      err << "config error: prompt has no geometry-consistency criterion to "
             "ablate\n";
      return kExitConfigError;
    }
    if (kept.empty()) {
      err << "config error: ablation would leave no criteria\n";
      return kExitConfigError;
    }
    ablated.prompt.criteria = std::move(kept);
  } else {
    ablated.scorer_view_limit = 1;
    for (auto& c : ablated.prompt.criteria)
      if (auto* cs = std::get_if<ContentSilhouetteCriterion>(&c.kind))
        cs->targets.resize(1);
  }

  try {
    const std::string root = lc.config.out_dir;
    write_snapshot(root, lc.doc);

    const RunState base_state =
        distill_run(build_initial_scene(lc.config), lc.config.distill,
                    lc.config.context, root + "/base");
    const RunState ablated_state =
        distill_run(build_initial_scene(lc.config), lc.config.distill, ablated,
                    root + "/ablated");

    // Both finals evaluated with the full prompt on the full view set.
    const EvalMetrics base_eval = evaluate_scene(base_state.scene, lc.config);
    const EvalMetrics ablated_eval =
        evaluate_scene(ablated_state.scene, lc.config);

    nlohmann::ordered_json cmp;
    cmp["axis"] = axis;
    cmp["seed"] = lc.config.seed;
    cmp["base"] = {{"content_D", base_eval.content_discrepancy},
                   {"geometry_V", base_eval.geometry_variance},
                   {"iou", base_eval.iou}};
    cmp["ablated"] = {{"content_D", ablated_eval.content_discrepancy},
                      {"geometry_V", ablated_eval.geometry_variance},
                      {"iou", ablated_eval.iou}};
    {
      std::ofstream os(root + "/ablate_comparison.json", std::ios::binary);
      if (!os)
        throw std::runtime_error("cannot write comparison in " + root);
      os << cmp.dump(2) << "\n";
    }
    out << "ablate axis=" << axis << "\n";
    out << "  base:    " << format_eval(base_eval) << "\n";
    out << "  ablated: " << format_eval(ablated_eval) << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_fixture(const std::string& kind, const std::string& out_dir,
                std::uint64_t seed, std::ostream& out, std::ostream& err) {
  try {
    write_fixture(kind, out_dir, seed);
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  out << "fixture '" << kind << "' written to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace vlm3d
