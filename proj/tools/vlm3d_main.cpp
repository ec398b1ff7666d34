#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vlm3d/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "vlm3d - differentiable text-to-3D distillation with a multi-view "
      "yes/no reward"};
  app.require_subcommand(1);
  app.footer(
      "Environment: VLM3D_THREADS selects the worker count (default: machine "
      "parallelism); results are identical for any value.");

  std::string config_path, out_dir, selector = "all", axis;
  std::string records_path, arena_method = "bt", anchor, csv_out = "ratings.csv";
  std::string fixture_kind;
  std::vector<std::string> overrides, declared_methods;
  std::optional<std::uint64_t> seed_opt;
  std::uint64_t seed = 0;
  double k_factor = 32.0;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed_opt = s; },
        "Seed override");
  };

  CLI::App* distill = app.add_subcommand("distill", "Run the optimization loop");
  distill->add_option("--config", config_path, "Config file")->required();
  distill->add_option("--set", overrides,
                      "Dotted-path override, e.g. distill.total_steps=50");
  distill->add_option("--out", out_dir, "Output directory override");
  add_seed(distill);

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference checks per module");
  gradcheck->add_option("selector", selector,
                        "renderer|preprocess|scorer|orientation|all");
  gradcheck->add_option("--seed", seed, "Probe seed");

  CLI::App* arena =
      app.add_subcommand("arena", "Pairwise ratings from match records");
  arena->add_option("--records", records_path, "JSON-lines match records")
      ->required();
  arena->add_option("--method", arena_method, "elo|bt");
  arena->add_option("--anchor", anchor, "Anchor method (rating 1000)")
      ->required();
  arena->add_option("--k", k_factor, "Elo k-factor");
  arena->add_option("--out", csv_out, "Ratings CSV path");
  arena->add_option("--methods", declared_methods,
                    "Declared methods (useful with empty records)");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run base and ablated variants with the same seed");
  ablate->add_option("--config", config_path, "Config file")->required();
  ablate->add_option("--axis", axis, "geometry-query|single-view")->required();
  ablate->add_option("--set", overrides, "Dotted-path override");
  ablate->add_option("--out", out_dir, "Output directory override");
  add_seed(ablate);

  CLI::App* fixture = app.add_subcommand(
      "fixture", "Materialize a synthetic task (targets + config)");
  fixture->add_option("--kind", fixture_kind,
                      "sphere|janus|janus-short|determinism")
      ->required();
  fixture->add_option("--out", out_dir, "Output directory")->required();
  fixture->add_option("--seed", seed, "Fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : vlm3d::kExitConfigError;
  }

  if (distill->parsed())
    return vlm3d::cmd_distill(config_path, overrides, out_dir, seed_opt,
                              std::cout, std::cerr);
  if (gradcheck->parsed())
    return vlm3d::cmd_gradcheck(selector, seed, std::cout, std::cerr);
  if (arena->parsed())
    return vlm3d::cmd_arena(records_path, arena_method, anchor, k_factor,
                            csv_out, declared_methods, std::cout, std::cerr);
  if (ablate->parsed())
    return vlm3d::cmd_ablate(config_path, axis, overrides, out_dir, seed_opt,
                             std::cout, std::cerr);
  if (fixture->parsed())
    return vlm3d::cmd_fixture(fixture_kind, out_dir, seed, std::cout,
                              std::cerr);
  return vlm3d::kExitConfigError;
}
