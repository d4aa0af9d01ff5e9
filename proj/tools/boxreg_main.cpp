#include <CLI11.hpp>

#include "boxreg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Registration of sequential oriented bounding boxes to point cloud streams"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, track_path, out_path;
  std::string mode = "lbfgs";
  std::uint64_t seed = 0;
  bool have_seed = false;
  bool corrupt = false;

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim->add_option("--config", config_path, "Config file")->required();
  sim->add_option("--out", out_path, "Output dataset JSON")->required();
  sim->add_option("--seed", seed, "Override the config seed")
      ->each([&](const std::string&) { have_seed = true; });

  CLI::App* reg = app.add_subcommand("register", "Register boxes to the point cloud stream");
  reg->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  reg->add_option("--config", config_path, "Config file")->required();
  reg->add_option("--out", out_path, "Output refined-track JSON")->required();
  reg->add_option("--mode", mode, "Optimizer: lbfgs, newton, or window")
      ->default_val("lbfgs");

  CLI::App* eval = app.add_subcommand("evaluate", "Compare a track against the ground truth");
  eval->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  eval->add_option("--track", track_path, "Track JSON to evaluate")->required();
  eval->add_option("--out", out_path, "Output metrics JSON")->required();

  CLI::App* icp = app.add_subcommand("baseline-icp", "Per-frame ICP baseline");
  icp->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  icp->add_option("--out", out_path, "Output refined-track JSON")->required();

  CLI::App* grad = app.add_subcommand("gradcheck", "Verify analytic gradients");
  grad->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  grad->add_option("--config", config_path, "Config file")->required();
  grad->add_flag("--corrupt-gradient", corrupt, "Test hook: inject a gradient error")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : boxreg::cli::kExitValidation;
  }

  if (sim->parsed()) {
    return boxreg::cli::run_simulate(
        config_path, out_path,
        have_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
  }
  if (reg->parsed()) {
    return boxreg::cli::run_register(dataset_path, config_path, out_path, mode);
  }
  if (eval->parsed()) {
    return boxreg::cli::run_evaluate(dataset_path, track_path, out_path);
  }
  if (icp->parsed()) {
    return boxreg::cli::run_baseline_icp(dataset_path, out_path);
  }
  if (grad->parsed()) {
    return boxreg::cli::run_gradcheck(dataset_path, config_path, corrupt);
  }
  return boxreg::cli::kExitValidation;
}
