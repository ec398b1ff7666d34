#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm3d/distill.hpp"

namespace vlm3d {

// Raised for anything the user can fix in the config or on the command
// line; the CLI maps it to the config-error exit status.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SceneConfig {
  Resolution resolution{32, 32, 32};
  Aabb bounds{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  double init_raw_density = -4.0;
  double init_raw_color = 0.0;
  double init_noise = 0.0;
};

// One file, one experiment: scene, cameras, renderer, preprocessing, prior,
// prompt and loop settings, resolved and validated before any compute.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  SceneConfig scene;
  DistillConfig distill;
  DistillContext context;  // views/render/preprocess/prior/prompt

  // Paths as written in the file (for round-tripping); resolved against the
  // config directory when the model is built.
  nlohmann::ordered_json source;
};

// Parses and validates; error messages carry the offending field path.
// base_dir resolves relative target paths (usually the config's directory).
RunConfig parse_run_config(const nlohmann::ordered_json& doc,
                           const std::string& base_dir);
RunConfig load_run_config(const std::string& path);

// Serializes back to the normalized document (defaults filled in); parsing
// the result yields the same configuration.
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

// Applies a dotted-path override ("distill.anneal.lambda_start=500") to a
// JSON document; the value is parsed as JSON when possible, else kept as a
// string.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

// Builds the initial scene (seeded init noise) from the config.
SceneGrid build_initial_scene(const RunConfig& config);

}  // namespace vlm3d
