#pragma once

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "infoprop/pipeline.hpp"

namespace infoprop {

/// Exit codes: 0 success, 1 usage/config error, 2 verification failure,
/// 3 I/O error.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Infoprop rollout mechanism: ensemble fusion, Kalman conditioning, "
               "entropy-tracked model rollouts"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::string mechanism_override, mode_override;
  int64_t seed_override = -1;
  app.add_option("--config", config_path, "experiment config file (key = value lines)");
  app.add_option("--seed", seed_override, "override the master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--mechanism", mechanism_override, "rollout mechanism: ts|infoprop")
      ->check(CLI::IsMember({"ts", "infoprop"}));
  app.add_option("--mode", mode_override, "covariance mode: diag|dense")
      ->check(CLI::IsMember({"diag", "dense"}));

  std::string dataset_path, model_path, thresholds_path, env_trajs, model_trajs;

  CLI::App* generate = app.add_subcommand("generate", "sample environment rollouts into a dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "train the probabilistic ensemble");
  train_cmd->add_option("--dataset", dataset_path, "dataset.csv from generate")->required();
  CLI::App* calibrate = app.add_subcommand("calibrate", "compute entropy thresholds");
  calibrate->add_option("--model", model_path, "model.json from train")->required();
  calibrate->add_option("--dataset", dataset_path, "dataset.csv from generate")->required();
  CLI::App* rollout_cmd = app.add_subcommand("rollout", "run model rollouts");
  rollout_cmd->add_option("--model", model_path, "model.json from train")->required();
  rollout_cmd->add_option("--thresholds", thresholds_path,
                          "thresholds.json from calibrate (required for infoprop)");
  CLI::App* evaluate = app.add_subcommand("evaluate", "per-step W1 between trajectory files");
  evaluate->add_option("--env-trajs", env_trajs, "reference trajectories json")->required();
  evaluate->add_option("--model-trajs", model_trajs, "model trajectories json")->required();
  CLI::App* verify = app.add_subcommand("verify", "run the full oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    ExperimentConfig cfg =
        config_path.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (!mechanism_override.empty()) cfg.rollout_mechanism = mechanism_override;
    if (!mode_override.empty()) cfg.mode = mode_override;

    if (generate->parsed()) {
      cmd_generate(cfg, out_dir);
      std::cout << "wrote dataset + env trajectories to " << out_dir << "\n";
    } else if (train_cmd->parsed()) {
      cmd_train(cfg, dataset_path, out_dir);
      std::cout << "wrote model checkpoint + loss curve to " << out_dir << "\n";
    } else if (calibrate->parsed()) {
      cmd_calibrate(cfg, model_path, dataset_path, out_dir);
      std::cout << "wrote thresholds to " << out_dir << "\n";
    } else if (rollout_cmd->parsed()) {
      cmd_rollout(cfg, model_path, thresholds_path, out_dir);
      std::cout << "wrote trajectories + summary to " << out_dir << "\n";
    } else if (evaluate->parsed()) {
      cmd_evaluate(cfg, env_trajs, model_trajs, out_dir);
      std::cout << "wrote metrics to " << out_dir << "\n";
    } else if (verify->parsed()) {
      const bool ok = cmd_verify(cfg, out_dir);
      std::cout << (ok ? "all oracles passed" : "ORACLE FAILURE — see oracle_report.json")
                << " (" << out_dir << ")\n";
      return ok ? 0 : 2;
    }
    return 0;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace infoprop
