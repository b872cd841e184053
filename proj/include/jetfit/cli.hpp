#ifndef JETFIT_CLI_HPP
#define JETFIT_CLI_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "jetfit/estimators.hpp"
#include "jetfit/synth.hpp"

namespace jetfit::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDataError = 2;
inline constexpr int kExitNumericalError = 3;

/// Serializable estimator description; `make_estimator_config` resolves it
/// (loading the model file for learned strategies) into an EstimatorConfig.
struct EstimatorSpec {
  int order = 3;
  std::vector<int> scales = {700, 350, 175};
  std::string weights = "uniform";  // uniform | gaussian | irls-huber | irls-tukey | learned
  double bandwidth = 0.5;
  int irls_iterations = 5;
  double irls_scale = 0.0;
  std::string offsets = "none";  // none | reproject | learned
  int reproject_iterations = 3;
  double reproject_step = 1.0;
  double truncation = 0.0;
  std::string model_path;
};

EstimatorConfig make_estimator_config(const EstimatorSpec& spec);

struct SynthOptions {
  std::string spec_path;
  std::string out_dir = ".";
  std::string name = "scene";
};

struct EstimateOptions {
  std::string input_path;
  std::string output_path;
  std::string diagnostics_path;  // optional CSV
  EstimatorSpec estimator;
  int threads = 0;  // 0 = hardware concurrency
};

struct EvaluateOptions {
  std::string pred_path;
  std::string gt_path;
  std::string mask_path;       // optional: rows flagged 1 are skipped
  std::string curve_path;      // optional AUC CSV
  std::string cloud_path;      // optional .xyz, required for the error map
  std::string error_map_path;  // optional colored PLY of per-point errors
  double auc_max_deg = 30.0;
};

struct AblateOptions {
  std::string suite_path;
  std::string out_path;
  int queries_per_scene = 100;
};

struct SensitivityOptions {
  std::string input_path;
  int query = 0;
  std::string out_path;
  EstimatorSpec estimator;  // order + smallest scale are used
  double fd_step = 1e-6;
};

struct TrainOptions {
  std::string data_dir;
  std::string out_dir = ".";
  std::string name = "model";
  int steps = 500;
  double learning_rate = 5e-4;
  std::uint64_t train_seed = 7;
  std::uint64_t init_seed = 1;
  std::vector<int> scales = {64, 32, 16};
  int feature_width = 64;
  int order = 3;
  int queries_per_scene = 32;
};

// Each command writes its outputs plus a JSON manifest (<name>.manifest.json
// or <output>.manifest.json) from which `run_rerun` reproduces the outputs
// byte-exactly.
void run_synth(const SynthOptions& options);
double run_estimate(const EstimateOptions& options);  // returns mean condition
double run_evaluate(const EvaluateOptions& options);  // returns RMSE (degrees)
void run_ablate(const AblateOptions& options);
void run_sensitivity(const SensitivityOptions& options);
void run_train(const TrainOptions& options);
void run_rerun(const std::string& manifest_path, const std::string& out_dir);

/// Scene spec <-> JSON (the cmd_synth input format).
SceneSpec parse_scene_spec(const std::string& json_text);
std::string scene_spec_to_json(const SceneSpec& spec);

}  // namespace jetfit::cli

#endif  // JETFIT_CLI_HPP
