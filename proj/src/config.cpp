#include "vlm3d/config.hpp"

#include <filesystem>
#include <fstream>

#include "vlm3d/rng.hpp"

namespace vlm3d {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

const json& require(const json& parent, const std::string& key,
                    const std::string& path) {
  if (!parent.contains(key)) fail(path + "." + key, "missing field");
  return parent.at(key);
}

double get_number(const json& parent, const std::string& key,
                  const std::string& path, double fallback,
                  bool required = false) {
  if (!parent.contains(key)) {
    if (required) fail(path + "." + key, "missing field");
    return fallback;
  }
  const json& v = parent.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

std::int64_t get_int(const json& parent, const std::string& key,
                     const std::string& path, std::int64_t fallback,
                     bool required = false) {
  if (!parent.contains(key)) {
    if (required) fail(path + "." + key, "missing field");
    return fallback;
  }
  const json& v = parent.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<std::int64_t>();
}

std::string get_string(const json& parent, const std::string& key,
                       const std::string& path, const std::string& fallback,
                       bool required = false) {
  if (!parent.contains(key)) {
    if (required) fail(path + "." + key, "missing field");
    return fallback;
  }
  const json& v = parent.at(key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

Vec3 get_vec3(const json& parent, const std::string& key,
              const std::string& path, const Vec3& fallback) {
  if (!parent.contains(key)) return fallback;
  const json& v = parent.at(key);
  if (!v.is_array() || v.size() != 3) fail(path + "." + key, "expected [x,y,z]");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

std::string resolve_path(const std::string& raw, const std::string& base_dir) {
  fs::path p(raw);
  if (p.is_absolute()) return p.string();
  return (fs::path(base_dir) / p).string();
}

Image load_target(const std::string& raw, const std::string& base_dir,
                  const std::string& path) {
  const std::string resolved = resolve_path(raw, base_dir);
  if (!fs::exists(resolved)) fail(path, "referenced file not found: " + raw);
  try {
    return load_image_raw(resolved);
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
}

ScoreModel parse_prior(const json& doc, const std::string& base_dir,
                       const std::string& path, double default_cfg_scale);

ScoreModel parse_prior(const json& doc, const std::string& base_dir,
                       const std::string& path, double default_cfg_scale) {
  const std::string variant =
      get_string(doc, "variant", path, "", /*required=*/true);
  if (variant == "point-mass") {
    const json& targets = require(doc, "targets", path);
    if (!targets.is_array() || targets.empty())
      fail(path + ".targets", "expected a non-empty array of image paths");
    std::vector<Image> images;
    for (std::size_t i = 0; i < targets.size(); ++i)
      images.push_back(load_target(targets[i].get<std::string>(), base_dir,
                                   path + ".targets[" + std::to_string(i) +
                                       "]"));
    return ScoreModel::point_mass(std::move(images));
  }
  if (variant == "gaussian-mixture") {
    const json& weights = require(doc, "weights", path);
    const json& means = require(doc, "means", path);
    if (!weights.is_array() || !means.is_array() ||
        weights.size() != means.size() || weights.empty())
      fail(path, "mixture needs matching non-empty weights and means");
    std::vector<double> w;
    for (const auto& v : weights) w.push_back(v.get<double>());
    std::vector<Image> images;
    for (std::size_t i = 0; i < means.size(); ++i)
      images.push_back(load_target(means[i].get<std::string>(), base_dir,
                                   path + ".means[" + std::to_string(i) +
                                       "]"));
    const double var = get_number(doc, "data_variance", path, 0.0);
    try {
      return ScoreModel::gaussian_mixture(std::move(w), std::move(images), var);
    } catch (const std::exception& e) {
      fail(path, e.what());
    }
  }
  if (variant == "paired") {
    const double scale =
        get_number(doc, "cfg_scale", path, default_cfg_scale);
    ScoreModel cond = parse_prior(require(doc, "conditional", path), base_dir,
                                  path + ".conditional", default_cfg_scale);
    ScoreModel uncond =
        parse_prior(require(doc, "unconditional", path), base_dir,
                    path + ".unconditional", default_cfg_scale);
    try {
      return ScoreModel::paired(std::move(cond), std::move(uncond), scale);
    } catch (const std::exception& e) {
      fail(path, e.what());
    }
  }
  fail(path + ".variant", "unknown prior variant '" + variant + "'");
}

PreprocChain parse_preprocess(const json& doc, const std::string& path) {
  PreprocChain chain;
  if (!doc.contains("stages")) return chain;
  const json& stages = doc.at("stages");
  if (!stages.is_array()) fail(path + ".stages", "expected an array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const json& st = stages[i];
    const std::string spath = path + ".stages[" + std::to_string(i) + "]";
    const std::string type = get_string(st, "type", spath, "", true);
    if (type == "resize") {
      ResizeStage s;
      s.width = static_cast<int>(get_int(st, "width", spath, 0, true));
      s.height = static_cast<int>(get_int(st, "height", spath, 0, true));
      if (s.width < 1 || s.height < 1)
        fail(spath, "resize target size must be positive");
      chain.stages.push_back(s);
    } else if (type == "crop_or_pad") {
      CropOrPadStage s;
      s.width = static_cast<int>(get_int(st, "width", spath, 0, true));
      s.height = static_cast<int>(get_int(st, "height", spath, 0, true));
      s.pad_value = get_number(st, "pad_value", spath, 0.0);
      if (s.width < 1 || s.height < 1)
        fail(spath, "crop_or_pad target size must be positive");
      chain.stages.push_back(s);
    } else if (type == "normalize") {
      NormalizeStage s;
      const json& mean = require(st, "mean", spath);
      const json& scale = require(st, "scale", spath);
      if (!mean.is_array() || !scale.is_array())
        fail(spath, "normalize mean/scale must be arrays");
      for (const auto& v : mean) s.mean.push_back(v.get<double>());
      for (const auto& v : scale) {
        s.scale.push_back(v.get<double>());
        if (s.scale.back() == 0.0) fail(spath, "normalize scale must be nonzero");
      }
      if (s.mean.size() != s.scale.size())
        fail(spath, "normalize mean/scale lengths differ");
      chain.stages.push_back(s);
    } else {
      fail(spath + ".type", "unknown stage type '" + type + "'");
    }
  }
  return chain;
}

PromptSpec parse_prompt(const json& doc, const std::string& base_dir,
                        const std::string& path) {
  PromptSpec prompt;
  prompt.description_id = get_string(doc, "description_id", path, "", true);
  const std::string mode = get_string(doc, "query_mode", path, "combined");
  if (mode == "combined")
    prompt.query_mode = QueryMode::Combined;
  else if (mode == "separate")
    prompt.query_mode = QueryMode::Separate;
  else
    fail(path + ".query_mode", "expected 'combined' or 'separate'");

  const json& criteria = require(doc, "criteria", path);
  if (!criteria.is_array() || criteria.empty())
    fail(path + ".criteria", "expected a non-empty array");
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const json& c = criteria[i];
    const std::string cpath = path + ".criteria[" + std::to_string(i) + "]";
    CriterionSpec spec;
    spec.weight = get_number(c, "weight", cpath, 1.0);
    if (!(spec.weight >= 0.0)) fail(cpath + ".weight", "must be >= 0");
    const std::string kind = get_string(c, "kind", cpath, "", true);
    if (kind == "content-silhouette") {
      ContentSilhouetteCriterion cs;
      cs.sharpness = get_number(c, "sharpness", cpath, 1.0);
      cs.threshold = get_number(c, "threshold", cpath, 0.05);
      if (!(cs.sharpness > 0.0)) fail(cpath + ".sharpness", "must be > 0");
      const json& targets = require(c, "targets", cpath);
      if (!targets.is_array() || targets.empty())
        fail(cpath + ".targets", "expected a non-empty array of image paths");
      for (std::size_t t = 0; t < targets.size(); ++t)
        cs.targets.push_back(
            load_target(targets[t].get<std::string>(), base_dir,
                        cpath + ".targets[" + std::to_string(t) + "]"));
      spec.kind = std::move(cs);
    } else if (kind == "geometry-consistency") {
      GeometryConsistencyCriterion g;
      g.sharpness = get_number(c, "sharpness", cpath, 1.0);
      g.tolerance = get_number(c, "tolerance", cpath, 1e-3);
      if (!(g.sharpness > 0.0)) fail(cpath + ".sharpness", "must be > 0");
      spec.kind = g;
    } else if (kind == "conv-probe") {
      ConvProbeCriterion p;
      p.seed = static_cast<std::uint64_t>(get_int(c, "seed", cpath, 0));
      p.bias = get_number(c, "bias", cpath, 0.0);
      if (c.contains("widths")) {
        const json& widths = c.at("widths");
        if (!widths.is_array() || widths.empty())
          fail(cpath + ".widths", "expected a non-empty array");
        p.widths.clear();
        for (const auto& w : widths) {
          p.widths.push_back(w.get<int>());
          if (p.widths.back() < 1) fail(cpath + ".widths", "must be >= 1");
        }
      }
      spec.kind = p;
    } else {
      fail(cpath + ".kind", "unknown criterion kind '" + kind + "'");
    }
    prompt.criteria.push_back(std::move(spec));
  }
  return prompt;
}

}  // namespace

RunConfig parse_run_config(const json& doc, const std::string& base_dir) {
  RunConfig cfg;
  cfg.source = doc;
  cfg.seed = static_cast<std::uint64_t>(get_int(doc, "seed", "", 0));
  cfg.out_dir = get_string(doc, "out_dir", "", "");

  if (doc.contains("scene")) {
    const json& s = doc.at("scene");
    if (s.contains("resolution")) {
      const json& r = s.at("resolution");
      if (!r.is_array() || r.size() != 3)
        fail("scene.resolution", "expected [x,y,z]");
      cfg.scene.resolution = {r[0].get<int>(), r[1].get<int>(),
                              r[2].get<int>()};
      if (cfg.scene.resolution.x < 1 || cfg.scene.resolution.y < 1 ||
          cfg.scene.resolution.z < 1)
        fail("scene.resolution", "must be >= 1 per axis");
    }
    cfg.scene.bounds.lo = get_vec3(s, "bounds_min", "scene",
                                   {-0.5, -0.5, -0.5});
    cfg.scene.bounds.hi = get_vec3(s, "bounds_max", "scene", {0.5, 0.5, 0.5});
    if (!(cfg.scene.bounds.lo.x < cfg.scene.bounds.hi.x &&
          cfg.scene.bounds.lo.y < cfg.scene.bounds.hi.y &&
          cfg.scene.bounds.lo.z < cfg.scene.bounds.hi.z))
      fail("scene.bounds_min", "bounds must have positive extent");
    cfg.scene.init_raw_density =
        get_number(s, "init_raw_density", "scene", -4.0);
    cfg.scene.init_raw_color = get_number(s, "init_raw_color", "scene", 0.0);
    cfg.scene.init_noise = get_number(s, "init_noise", "scene", 0.0);
    if (cfg.scene.init_noise < 0.0) fail("scene.init_noise", "must be >= 0");
  }

  DistillContext& ctx = cfg.context;
  if (doc.contains("views")) {
    const json& v = doc.at("views");
    ctx.views.num_views =
        static_cast<int>(get_int(v, "num_views", "views", 8));
    if (ctx.views.num_views < 1) fail("views.num_views", "must be >= 1");
    ctx.views.radius = get_number(v, "radius", "views", 2.5);
    if (!(ctx.views.radius > 0.0)) fail("views.radius", "must be > 0");
    if (v.contains("elevation_deg")) {
      const json& e = v.at("elevation_deg");
      if (!e.is_array() || e.size() != 2)
        fail("views.elevation_deg", "expected [min,max] in degrees");
      ctx.views.elevation_min = deg_to_rad(e[0].get<double>());
      ctx.views.elevation_max = deg_to_rad(e[1].get<double>());
      if (ctx.views.elevation_min > ctx.views.elevation_max)
        fail("views.elevation_deg", "range is empty");
    }
    const std::string policy =
        get_string(v, "azimuth_policy", "views", "uniform-ring");
    if (policy == "uniform-ring")
      ctx.views.policy = AzimuthPolicy::UniformRing;
    else if (policy == "random")
      ctx.views.policy = AzimuthPolicy::Random;
    else
      fail("views.azimuth_policy", "expected 'uniform-ring' or 'random'");
    ctx.vertical_fov = deg_to_rad(get_number(v, "fov_deg", "views", 40.0));
    if (!(ctx.vertical_fov > 0.0 && ctx.vertical_fov < kPi))
      fail("views.fov_deg", "must be in (0, 180)");
    ctx.image_width =
        static_cast<int>(get_int(v, "image_width", "views", 64));
    ctx.image_height =
        static_cast<int>(get_int(v, "image_height", "views", 64));
    if (ctx.image_width < 1 || ctx.image_height < 1)
      fail("views.image_width", "must be >= 1");
  }

  if (doc.contains("render")) {
    const json& r = doc.at("render");
    ctx.render.samples_per_ray =
        static_cast<int>(get_int(r, "samples_per_ray", "render", 64));
    ctx.render.near = get_number(r, "near", "render", 1.0);
    ctx.render.far = get_number(r, "far", "render", 4.0);
    ctx.render.background = get_vec3(r, "background", "render",
                                     {1.0, 1.0, 1.0});
    try {
      ctx.render.validate();
    } catch (const std::exception& e) {
      fail("render", e.what());
    }
  }

  if (doc.contains("preprocess"))
    ctx.preprocess = parse_preprocess(doc.at("preprocess"), "preprocess");

  if (doc.contains("distill")) {
    const json& d = doc.at("distill");
    DistillConfig& dc = cfg.distill;
    dc.num_views = ctx.views.num_views;
    dc.learning_rate = get_number(d, "learning_rate", "distill", 1e-3);
    dc.total_steps = get_int(d, "total_steps", "distill", 1500);
    dc.cfg_scale = get_number(d, "cfg_scale", "distill", 50.0);
    dc.seed = cfg.seed;
    if (d.contains("anneal")) {
      const json& a = d.at("anneal");
      dc.anneal.lambda_start =
          get_number(a, "lambda_start", "distill.anneal", 300.0);
      dc.anneal.lambda_end = get_number(a, "lambda_end", "distill.anneal", 1.0);
      dc.anneal.anneal_steps =
          get_int(a, "anneal_steps", "distill.anneal", 10000);
      dc.anneal.hold_steps = get_int(a, "hold_steps", "distill.anneal", 5000);
      if (dc.anneal.anneal_steps < 0 || dc.anneal.hold_steps < 0)
        fail("distill.anneal", "step counts must be >= 0");
    }
    if (d.contains("orientation")) {
      const json& o = d.at("orientation");
      dc.orientation.w_start =
          get_number(o, "w_start", "distill.orientation", 10.0);
      dc.orientation.w_end =
          get_number(o, "w_end", "distill.orientation", 1000.0);
      dc.orientation.ramp_steps =
          get_int(o, "ramp_steps", "distill.orientation", 5000);
      dc.orientation.weight_scale =
          get_number(o, "weight_scale", "distill.orientation", 1.0);
    }
    if (d.contains("optimizer")) {
      const json& o = d.at("optimizer");
      const std::string kind =
          get_string(o, "kind", "distill.optimizer", "adam");
      if (kind == "adam")
        dc.optimizer.kind = OptimizerConfig::Kind::Adam;
      else if (kind == "sgd")
        dc.optimizer.kind = OptimizerConfig::Kind::Sgd;
      else
        fail("distill.optimizer.kind", "expected 'adam' or 'sgd'");
      dc.optimizer.beta1 = get_number(o, "beta1", "distill.optimizer", 0.9);
      dc.optimizer.beta2 = get_number(o, "beta2", "distill.optimizer", 0.99);
      dc.optimizer.eps = get_number(o, "eps", "distill.optimizer", 1e-8);
    }
    if (d.contains("timestep_range")) {
      const json& t = d.at("timestep_range");
      if (!t.is_array() || t.size() != 2)
        fail("distill.timestep_range", "expected [min,max]");
      dc.t_min = t[0].get<double>();
      dc.t_max = t[1].get<double>();
    }
    dc.checkpoint_every = get_int(d, "checkpoint_every", "distill", 500);
    try {
      dc.validate();
    } catch (const std::exception& e) {
      fail("distill", e.what());
    }
  } else {
    cfg.distill.num_views = ctx.views.num_views;
    cfg.distill.seed = cfg.seed;
  }

  ctx.noise.sigma_min = 0.01;
  ctx.noise.sigma_max = 10.0;
  if (doc.contains("prior")) {
    const json& p = doc.at("prior");
    ctx.noise.sigma_min = get_number(p, "sigma_min", "prior", 0.01);
    ctx.noise.sigma_max = get_number(p, "sigma_max", "prior", 10.0);
    const std::string weighting =
        get_string(p, "weighting", "prior", "sigma-squared");
    if (weighting == "constant")
      ctx.noise.weighting = Weighting::Constant;
    else if (weighting == "sigma")
      ctx.noise.weighting = Weighting::Sigma;
    else if (weighting == "sigma-squared")
      ctx.noise.weighting = Weighting::SigmaSquared;
    else
      fail("prior.weighting",
           "expected 'constant', 'sigma' or 'sigma-squared'");
    try {
      ctx.noise.validate();
    } catch (const std::exception& e) {
      fail("prior", e.what());
    }
    ctx.prior_model = parse_prior(p, base_dir, "prior", cfg.distill.cfg_scale);
  } else {
    fail("prior", "missing section");
  }

  if (!doc.contains("prompt")) fail("prompt", "missing section");
  ctx.prompt = parse_prompt(doc.at("prompt"), base_dir, "prompt");
  try {
    ctx.prompt.validate();
  } catch (const std::exception& e) {
    fail("prompt", e.what());
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json doc;
  try {
    doc = json::parse(is);
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(doc, fs::path(path).parent_path().string());
}

nlohmann::ordered_json run_config_to_json(const RunConfig& config) {
  // The source document already is the normalized form (parsing fills struct
  // defaults without rewriting the document); emitting it verbatim keeps the
  // round trip exact, including relative target paths.
  return config.source;
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like path.to.key=value: " +
                      assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = path.find('.', begin);
    const std::string key = path.substr(
        begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty())
      throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (...) {
        parsed = value;  // plain string
      }
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    begin = dot + 1;
  }
}

SceneGrid build_initial_scene(const RunConfig& config) {
  SceneGrid scene =
      SceneGrid::make(config.scene.resolution, config.scene.bounds,
                      config.scene.init_raw_density, config.scene.init_raw_color);
  if (config.scene.init_noise > 0.0) {
    DetRng rng(mix_seed(config.seed, 0x696e6974ULL));
    for (auto& d : scene.raw_density)
      d += config.scene.init_noise * rng.normal();
    for (auto& c : scene.raw_color)
      c += config.scene.init_noise * rng.normal();
  }
  return scene;
}

}  // namespace vlm3d
