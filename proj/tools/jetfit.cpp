#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "jetfit/cli.hpp"
#include "jetfit/error.hpp"
#include "jetfit/version.hpp"

namespace {

void add_estimator_flags(CLI::App* cmd, jetfit::cli::EstimatorSpec& spec) {
  cmd->add_option("--order", spec.order, "Polynomial order of the fitted surface (1-6)");
  cmd->add_option("--scales", spec.scales, "Neighborhood scale chain, largest first")
      ->delimiter(',');
  cmd->add_option("--weights", spec.weights,
                  "Weight strategy: uniform | gaussian | irls-huber | irls-tukey | learned");
  cmd->add_option("--bandwidth", spec.bandwidth,
                  "Gaussian bandwidth as a fraction of the patch radius");
  cmd->add_option("--irls-iterations", spec.irls_iterations, "IRLS reweighting iterations");
  cmd->add_option("--irls-scale", spec.irls_scale,
                  "IRLS residual scale; <= 0 uses 1.4826 * median absolute residual");
  cmd->add_option("--offsets", spec.offsets, "Offset strategy: none | reproject | learned");
  cmd->add_option("--reproject-iterations", spec.reproject_iterations,
                  "Reprojection offset iterations");
  cmd->add_option("--reproject-step", spec.reproject_step, "Reprojection step in (0, 1]");
  cmd->add_option("--truncate", spec.truncation,
                  "Zero weights below this fraction of the max weight (0 disables)");
  cmd->add_option("--model", spec.model_path, "Model file for learned strategies");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud normal estimation by weighted polynomial surface fitting"};
  app.set_version_flag("--version", jetfit::kVersion);
  app.require_subcommand(1);

  jetfit::cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark scene");
  synth_cmd->add_option("--spec", synth.spec_path, "Scene spec JSON")->required();
  synth_cmd->add_option("--out", synth.out_dir, "Output directory");
  synth_cmd->add_option("--name", synth.name, "Output base name");

  jetfit::cli::EstimateOptions estimate;
  auto* estimate_cmd = app.add_subcommand("estimate", "Estimate a normal for every point");
  estimate_cmd->add_option("--input", estimate.input_path, "Input .xyz cloud")->required();
  estimate_cmd->add_option("--output", estimate.output_path, "Output .normals file")->required();
  estimate_cmd->add_option("--diagnostics", estimate.diagnostics_path,
                           "Optional per-point diagnostics CSV");
  estimate_cmd->add_option("--threads", estimate.threads, "Worker threads (0 = hardware)");
  add_estimator_flags(estimate_cmd, estimate.estimator);

  jetfit::cli::EvaluateOptions evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Angular RMSE and AUC curve");
  evaluate_cmd->add_option("--pred", evaluate.pred_path, "Predicted .normals")->required();
  evaluate_cmd->add_option("--gt", evaluate.gt_path, "Ground-truth .normals")->required();
  evaluate_cmd->add_option("--mask", evaluate.mask_path, "Outlier mask; rows flagged 1 skipped");
  evaluate_cmd->add_option("--curve", evaluate.curve_path, "AUC curve CSV output");
  evaluate_cmd->add_option("--auc-max", evaluate.auc_max_deg, "AUC threshold sweep end (deg)");
  evaluate_cmd->add_option("--cloud", evaluate.cloud_path, "Point cloud .xyz (for --error-map)");
  evaluate_cmd->add_option("--error-map", evaluate.error_map_path,
                           "Colored PLY of per-point errors");

  jetfit::cli::AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run a config x scene ablation table");
  ablate_cmd->add_option("--suite", ablate.suite_path, "Suite JSON")->required();
  ablate_cmd->add_option("--out", ablate.out_path, "Output CSV")->required();
  ablate_cmd->add_option("--queries", ablate.queries_per_scene, "Queries per scene");

  jetfit::cli::SensitivityOptions sensitivity;
  auto* sensitivity_cmd =
      app.add_subcommand("sensitivity", "Per-weight derivative report for one query point");
  sensitivity_cmd->add_option("--input", sensitivity.input_path, "Input .xyz cloud")->required();
  sensitivity_cmd->add_option("--query", sensitivity.query, "Query point index")->required();
  sensitivity_cmd->add_option("--out", sensitivity.out_path, "Output CSV")->required();
  sensitivity_cmd->add_option("--fd-step", sensitivity.fd_step, "Finite-difference step");
  add_estimator_flags(sensitivity_cmd, sensitivity.estimator);

  jetfit::cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy network on synth scenes");
  train_cmd->add_option("--data", train.data_dir, "Directory of synth scenes")->required();
  train_cmd->add_option("--out", train.out_dir, "Output directory");
  train_cmd->add_option("--name", train.name, "Output base name");
  train_cmd->add_option("--steps", train.steps, "Training steps");
  train_cmd->add_option("--lr", train.learning_rate, "Learning rate");
  train_cmd->add_option("--train-seed", train.train_seed, "Shuffle/sampling seed");
  train_cmd->add_option("--init-seed", train.init_seed, "Parameter init seed");
  train_cmd->add_option("--scales", train.scales, "Model scale chain")->delimiter(',');
  train_cmd->add_option("--feature-width", train.feature_width, "Feature width");
  train_cmd->add_option("--net-order", train.order, "Fit order inside the network");
  train_cmd->add_option("--queries", train.queries_per_scene, "Patches sampled per scene");

  std::string rerun_manifest, rerun_out = ".";
  auto* rerun_cmd = app.add_subcommand("rerun", "Re-execute a command from its manifest");
  rerun_cmd->add_option("--manifest", rerun_manifest, "Manifest JSON")->required();
  rerun_cmd->add_option("--out", rerun_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      jetfit::cli::run_synth(synth);
    } else if (estimate_cmd->parsed()) {
      jetfit::cli::run_estimate(estimate);
    } else if (evaluate_cmd->parsed()) {
      const double rmse = jetfit::cli::run_evaluate(evaluate);
      std::printf("RMSE_deg %.6f\n", rmse);
    } else if (ablate_cmd->parsed()) {
      jetfit::cli::run_ablate(ablate);
    } else if (sensitivity_cmd->parsed()) {
      jetfit::cli::run_sensitivity(sensitivity);
    } else if (train_cmd->parsed()) {
      jetfit::cli::run_train(train);
    } else if (rerun_cmd->parsed()) {
      jetfit::cli::run_rerun(rerun_manifest, rerun_out);
    }
  } catch (const jetfit::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return jetfit::cli::kExitDataError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return jetfit::cli::kExitUsage;
  } catch (const jetfit::Error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return jetfit::cli::kExitNumericalError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return jetfit::cli::kExitNumericalError;
  }
  return jetfit::cli::kExitOk;
}
