#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vlm3d/config.hpp"
#include "vlm3d/gradcheck.hpp"

namespace vlm3d {

// Exit statuses shared by all commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;      // compute/check/runtime failure
inline constexpr int kExitConfigError = 2;  // bad config, usage, bad data

// Post-run evaluation on the full view set (independent of any scorer
// ablation): content discrepancy and geometry variance of the final scene,
// plus mean silhouette IoU against the content targets (alpha and target
// both binarized at 0.5). IoU is NaN when the prompt has no content
// criterion.
struct EvalMetrics {
  double content_discrepancy = 0.0;
  double geometry_variance = 0.0;
  double iou = 0.0;
};

EvalMetrics evaluate_scene(const SceneGrid& scene, const RunConfig& config);

struct GradcheckCase {
  std::string name;
  GradCheckReport report;
  double tolerance = 1e-4;
};

// Seeded finite-difference suites per module selector (renderer, preprocess,
// scorer, orientation, all); points probes are spread over ten seeded
// instances per operation.
std::vector<GradcheckCase> run_gradcheck_suite(const std::string& selector,
                                               std::uint64_t seed,
                                               int points_per_op = 100);

int cmd_distill(const std::string& config_path,
                const std::vector<std::string>& overrides,
                const std::string& out_dir_override,
                std::optional<std::uint64_t> seed_override, std::ostream& out,
                std::ostream& err);

int cmd_gradcheck(const std::string& selector, std::uint64_t seed,
                  std::ostream& out, std::ostream& err);

int cmd_arena(const std::string& records_path, const std::string& method,
              const std::string& anchor, double k_factor,
              const std::string& out_csv,
              const std::vector<std::string>& declared_methods,
              std::ostream& out, std::ostream& err);

int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::vector<std::string>& overrides,
               const std::string& out_dir_override,
               std::optional<std::uint64_t> seed_override, std::ostream& out,
               std::ostream& err);

int cmd_fixture(const std::string& kind, const std::string& out_dir,
                std::uint64_t seed, std::ostream& out, std::ostream& err);

// Presence audit of a finished run directory: config snapshot, metrics log,
// final checkpoint, renders. Returns the missing entries.
std::vector<std::string> audit_run_dir(const std::string& dir);

}  // namespace vlm3d
