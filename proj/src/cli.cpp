#include "jetfit/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "jetfit/error.hpp"
#include "jetfit/eval.hpp"
#include "jetfit/io.hpp"
#include "jetfit/micronet.hpp"
#include "jetfit/sensitivity.hpp"
#include "jetfit/version.hpp"

namespace jetfit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json surface_to_json(const Surface& surface) {
  json j;
  if (const auto* plane = std::get_if<PlaneSurface>(&surface)) {
    j["type"] = "plane";
    j["coeffs"] = {plane->coeffs[0], plane->coeffs[1], plane->coeffs[2]};
  } else if (const auto* quadric = std::get_if<QuadricSurface>(&surface)) {
    j["type"] = "quadric";
    j["coeffs"] = std::vector<double>(quadric->coeffs.data(), quadric->coeffs.data() + 6);
  } else if (const auto* jet = std::get_if<JetSurface>(&surface)) {
    j["type"] = "jet";
    j["order"] = jet->order.n;
    j["coeffs"] = std::vector<double>(jet->coeffs.data(), jet->coeffs.data() + jet->coeffs.size());
  } else {
    const auto& composite = std::get<CompositeSurface>(surface);
    j["type"] = "composite";
    j["tiles"] = composite.tiles;
    j["curvature"] = composite.curvature;
    j["slope"] = composite.slope;
    j["seed"] = composite.seed;
  }
  return j;
}

Surface surface_from_json(const json& j) {
  const std::string type = j.value("type", "plane");
  if (type == "plane") {
    PlaneSurface plane;
    if (j.contains("coeffs")) {
      const auto c = j.at("coeffs").get<std::vector<double>>();
      if (c.size() != 3) throw std::invalid_argument("plane surface needs 3 coefficients");
      plane.coeffs << c[0], c[1], c[2];
    }
    return plane;
  }
  if (type == "quadric") {
    QuadricSurface quadric;
    const auto c = j.at("coeffs").get<std::vector<double>>();
    if (c.size() != 6) throw std::invalid_argument("quadric surface needs 6 coefficients");
    for (int i = 0; i < 6; ++i) quadric.coeffs[i] = c[static_cast<std::size_t>(i)];
    return quadric;
  }
  if (type == "jet") {
    JetSurface jet;
    jet.order = JetOrder(j.at("order").get<int>());
    const auto c = j.at("coeffs").get<std::vector<double>>();
    if (static_cast<int>(c.size()) != jet.order.coeff_count())
      throw std::invalid_argument("jet surface coefficient count mismatch");
    jet.coeffs = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    return jet;
  }
  if (type == "composite") {
    CompositeSurface composite;
    composite.tiles = j.value("tiles", composite.tiles);
    composite.curvature = j.value("curvature", composite.curvature);
    composite.slope = j.value("slope", composite.slope);
    composite.seed = j.value("seed", composite.seed);
    return composite;
  }
  throw std::invalid_argument("unknown surface type '" + type + "'");
}

json density_to_json(const DensityPattern& density) {
  json j;
  if (std::holds_alternative<UniformDensity>(density)) {
    j["type"] = "uniform";
  } else if (const auto* stripes = std::get_if<StripeDensity>(&density)) {
    j["type"] = "stripes";
    j["period"] = stripes->period;
    j["keep_fraction"] = stripes->keep_fraction;
  } else {
    const auto& gradient = std::get<GradientDensity>(density);
    j["type"] = "gradient";
    j["min_fraction"] = gradient.min_fraction;
  }
  return j;
}

DensityPattern density_from_json(const json& j) {
  const std::string type = j.value("type", "uniform");
  if (type == "uniform") return UniformDensity{};
  if (type == "stripes") {
    StripeDensity stripes;
    stripes.period = j.value("period", stripes.period);
    stripes.keep_fraction = j.value("keep_fraction", stripes.keep_fraction);
    return stripes;
  }
  if (type == "gradient") {
    GradientDensity gradient;
    gradient.min_fraction = j.value("min_fraction", gradient.min_fraction);
    return gradient;
  }
  throw std::invalid_argument("unknown density type '" + type + "'");
}

json scene_to_json(const SceneSpec& spec) {
  json j;
  j["surface"] = surface_to_json(spec.surface);
  j["n_points"] = spec.n_points;
  j["noise_sigma"] = spec.noise_sigma;
  j["noise_model"] = spec.noise_model == NoiseModel::AlongNormal ? "normal" : "isotropic";
  j["density"] = density_to_json(spec.density);
  j["outlier_fraction"] = spec.outlier_fraction;
  j["outlier_scale"] = spec.outlier_scale;
  j["seed"] = spec.seed;
  return j;
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  if (j.contains("surface")) spec.surface = surface_from_json(j.at("surface"));
  spec.n_points = j.value("n_points", spec.n_points);
  spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
  const std::string noise = j.value("noise_model", "normal");
  if (noise == "normal")
    spec.noise_model = NoiseModel::AlongNormal;
  else if (noise == "isotropic")
    spec.noise_model = NoiseModel::Isotropic;
  else
    throw std::invalid_argument("unknown noise model '" + noise + "'");
  if (j.contains("density")) spec.density = density_from_json(j.at("density"));
  spec.outlier_fraction = j.value("outlier_fraction", spec.outlier_fraction);
  spec.outlier_scale = j.value("outlier_scale", spec.outlier_scale);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

json estimator_to_json(const EstimatorSpec& spec) {
  json j;
  j["order"] = spec.order;
  j["scales"] = spec.scales;
  j["weights"] = spec.weights;
  j["bandwidth"] = spec.bandwidth;
  j["irls_iterations"] = spec.irls_iterations;
  j["irls_scale"] = spec.irls_scale;
  j["offsets"] = spec.offsets;
  j["reproject_iterations"] = spec.reproject_iterations;
  j["reproject_step"] = spec.reproject_step;
  j["truncation"] = spec.truncation;
  if (!spec.model_path.empty()) j["model"] = spec.model_path;
  return j;
}

EstimatorSpec estimator_from_json(const json& j) {
  EstimatorSpec spec;
  spec.order = j.value("order", spec.order);
  spec.scales = j.value("scales", spec.scales);
  spec.weights = j.value("weights", spec.weights);
  spec.bandwidth = j.value("bandwidth", spec.bandwidth);
  spec.irls_iterations = j.value("irls_iterations", spec.irls_iterations);
  spec.irls_scale = j.value("irls_scale", spec.irls_scale);
  spec.offsets = j.value("offsets", spec.offsets);
  spec.reproject_iterations = j.value("reproject_iterations", spec.reproject_iterations);
  spec.reproject_step = j.value("reproject_step", spec.reproject_step);
  spec.truncation = j.value("truncation", spec.truncation);
  spec.model_path = j.value("model", spec.model_path);
  return spec;
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("invalid " + what + ": " + e.what());
  }
}

void write_manifest(const std::string& path, const std::string& command, json config,
                    const json& inputs, const std::vector<std::string>& outputs) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["created"] = iso_timestamp();
  manifest["rng"] = "mt19937_64/box-muller";
  manifest["config"] = std::move(config);
  manifest["inputs"] = inputs;
  manifest["outputs"] = outputs;
  write_text_file(path, manifest.dump(2) + "\n");
}

std::string csv_double(double v) {
  std::ostringstream ss;
  ss.precision(12);
  ss << v;
  return ss.str();
}

PointCloud load_cloud(const std::string& xyz_path) {
  PointCloud cloud;
  cloud.points = read_xyz(xyz_path);
  return cloud;
}

std::vector<int> spread_queries(const std::vector<int>& candidates, int count) {
  std::vector<int> out;
  if (candidates.empty() || count < 1) return out;
  const int n = static_cast<int>(candidates.size());
  const int take = std::min(count, n);
  for (int i = 0; i < take; ++i)
    out.push_back(candidates[static_cast<std::size_t>(
        static_cast<long long>(i) * n / take)]);
  return out;
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& json_text) {
  if (json_text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw std::invalid_argument("invalid scene spec: empty file");
  return scene_from_json(parse_json_text(json_text, "scene spec"));
}

std::string scene_spec_to_json(const SceneSpec& spec) { return scene_to_json(spec).dump(2); }

EstimatorConfig make_estimator_config(const EstimatorSpec& spec) {
  EstimatorConfig config;
  config.order = JetOrder(spec.order);
  config.scale_chain = ScaleChain(spec.scales);
  config.truncation_threshold = spec.truncation;

  std::shared_ptr<const net::FitNet> model;
  const bool needs_model = spec.weights == "learned" || spec.offsets == "learned";
  if (needs_model) {
    if (spec.model_path.empty())
      throw std::invalid_argument("learned strategy requires a model file");
    model = std::make_shared<net::FitNet>(net::load_model(spec.model_path));
  }

  if (spec.weights == "uniform") {
    config.weights = UniformWeights{};
  } else if (spec.weights == "gaussian") {
    config.weights = GaussianDistanceWeights{spec.bandwidth};
  } else if (spec.weights == "irls-huber") {
    config.weights = IrlsWeights{RobustKernel::Huber, spec.irls_iterations, spec.irls_scale};
  } else if (spec.weights == "irls-tukey") {
    config.weights = IrlsWeights{RobustKernel::Tukey, spec.irls_iterations, spec.irls_scale};
  } else if (spec.weights == "learned") {
    config.weights = LearnedWeights{model};
  } else {
    throw std::invalid_argument("unknown weight strategy '" + spec.weights + "'");
  }

  if (spec.offsets == "none") {
    config.offsets = NoOffsets{};
  } else if (spec.offsets == "reproject") {
    config.offsets = IterativeReprojection{spec.reproject_iterations, spec.reproject_step};
  } else if (spec.offsets == "learned") {
    config.offsets = LearnedOffsets{model};
  } else {
    throw std::invalid_argument("unknown offset strategy '" + spec.offsets + "'");
  }
  return config;
}

void run_synth(const SynthOptions& options) {
  const SceneSpec spec = parse_scene_spec(read_text_file(options.spec_path));
  const LabeledCloud labeled = generate_scene(spec);

  fs::create_directories(options.out_dir);
  const fs::path base = fs::path(options.out_dir) / options.name;
  const std::string xyz = base.string() + ".xyz";
  const std::string normals = base.string() + ".normals";
  const std::string mask = base.string() + ".outliers";

  write_xyz(xyz, labeled.cloud.points);
  write_normals(normals, labeled.cloud.gt_normals);
  write_mask(mask, labeled.outlier_mask);
  write_manifest(base.string() + ".manifest.json", "synth", scene_to_json(spec), json::object(),
                 {options.name + ".xyz", options.name + ".normals", options.name + ".outliers"});
}

double run_estimate(const EstimateOptions& options) {
  const PointCloud cloud = load_cloud(options.input_path);
  if (cloud.size() == 0) throw IoError("empty cloud in " + options.input_path);
  const EstimatorConfig config = make_estimator_config(options.estimator);
  const KdTree index = build_index(cloud);

  const Eigen::Index n = cloud.size();
  std::vector<NormalEstimate> estimates(static_cast<std::size_t>(n));
  std::atomic<Eigen::Index> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const unsigned hw = std::thread::hardware_concurrency();
  const int thread_count =
      options.threads > 0 ? options.threads : static_cast<int>(hw > 0 ? hw : 1);
  auto worker = [&] {
    for (;;) {
      const Eigen::Index i = cursor.fetch_add(1);
      if (i >= n) return;
      auto& slot = estimates[static_cast<std::size_t>(i)];
      try {
        slot = estimate_normal(cloud, index, static_cast<int>(i), config);
      } catch (const DegenerateFrameError&) {
        slot.query_index = static_cast<int>(i);
        slot.normal = Eigen::Vector3d::UnitZ();
        slot.diagnostics.fallback = FallbackLevel::DegenerateFrame;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  Eigen::Matrix3Xd normals(3, n);
  double condition_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    normals.col(i) = estimates[static_cast<std::size_t>(i)].normal;
    condition_sum += estimates[static_cast<std::size_t>(i)].diagnostics.condition;
  }
  write_normals(options.output_path, normals);

  std::vector<std::string> outputs = {fs::path(options.output_path).filename().string()};
  if (!options.diagnostics_path.empty()) {
    std::ostringstream csv;
    csv << "index,condition,effective_weights,mean_offset,max_offset,fallback\n";
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& d = estimates[static_cast<std::size_t>(i)].diagnostics;
      csv << i << ',' << csv_double(d.condition) << ',' << d.effective_weights << ','
          << csv_double(d.mean_offset) << ',' << csv_double(d.max_offset) << ','
          << to_string(d.fallback) << '\n';
    }
    write_text_file(options.diagnostics_path, csv.str());
    outputs.push_back(fs::path(options.diagnostics_path).filename().string());
  }

  json inputs;
  inputs["cloud"] = options.input_path;
  json config_json;
  config_json["estimator"] = estimator_to_json(options.estimator);
  config_json["output"] = options.output_path;
  if (!options.diagnostics_path.empty()) config_json["diagnostics"] = options.diagnostics_path;
  write_manifest(options.output_path + ".manifest.json", "estimate", config_json, inputs, outputs);
  return n > 0 ? condition_sum / static_cast<double>(n) : 0.0;
}

double run_evaluate(const EvaluateOptions& options) {
  const Eigen::Matrix3Xd pred = read_normals(options.pred_path);
  const Eigen::Matrix3Xd gt = read_normals(options.gt_path);
  if (pred.cols() != gt.cols())
    throw IoError("prediction/ground-truth length mismatch: " + std::to_string(pred.cols()) +
                  " vs " + std::to_string(gt.cols()));
  std::vector<std::uint8_t> mask;
  if (!options.mask_path.empty()) {
    mask = read_mask(options.mask_path);
    if (static_cast<Eigen::Index>(mask.size()) != pred.cols())
      throw IoError("mask length mismatch");
  }

  std::vector<double> errors;
  std::vector<double> all_errors;  // per input line, masked rows included
  errors.reserve(static_cast<std::size_t>(pred.cols()));
  for (Eigen::Index i = 0; i < pred.cols(); ++i) {
    const double err = angle_error_deg<double>(pred.col(i), gt.col(i));
    all_errors.push_back(err);
    if (!mask.empty() && mask[static_cast<std::size_t>(i)]) continue;
    errors.push_back(err);
  }
  if (errors.empty()) throw IoError("no points left to evaluate");
  const double rmse = rmse_deg(errors);

  if (!options.error_map_path.empty()) {
    if (options.cloud_path.empty())
      throw std::invalid_argument("evaluate: --error-map needs --cloud for point positions");
    const PointCloud cloud = load_cloud(options.cloud_path);
    if (cloud.size() != pred.cols()) throw IoError("cloud/prediction length mismatch");
    write_error_map_ply(cloud, all_errors, options.error_map_path);
  }

  std::vector<std::string> outputs;
  if (!options.curve_path.empty()) {
    const AucCurve curve = auc_curve(errors, default_auc_thresholds(options.auc_max_deg));
    std::ostringstream csv;
    csv << "threshold_deg,fraction\n";
    for (std::size_t i = 0; i < curve.thresholds_deg.size(); ++i)
      csv << csv_double(curve.thresholds_deg[i]) << ',' << csv_double(curve.fractions[i]) << '\n';
    write_text_file(options.curve_path, csv.str());
    outputs.push_back(fs::path(options.curve_path).filename().string());

    json inputs;
    inputs["pred"] = options.pred_path;
    inputs["gt"] = options.gt_path;
    if (!options.mask_path.empty()) inputs["mask"] = options.mask_path;
    if (!options.cloud_path.empty()) inputs["cloud"] = options.cloud_path;
    json config;
    config["auc_max_deg"] = options.auc_max_deg;
    config["curve"] = options.curve_path;
    if (!options.error_map_path.empty()) {
      config["error_map"] = options.error_map_path;
      outputs.push_back(fs::path(options.error_map_path).filename().string());
    }
    write_manifest(options.curve_path + ".manifest.json", "evaluate", config, inputs, outputs);
  }
  return rmse;
}

void run_ablate(const AblateOptions& options) {
  const json suite = parse_json_text(read_text_file(options.suite_path), "ablation suite");
  const int queries = suite.value("queries_per_scene", options.queries_per_scene);

  struct NamedScene {
    std::string name;
    LabeledCloud labeled;
    KdTree index;
  };
  std::vector<NamedScene> scenes;
  for (const auto& scene_json : suite.at("scenes")) {
    const SceneSpec spec = scene_from_json(scene_json.at("spec"));
    LabeledCloud labeled = generate_scene(spec);
    KdTree index = build_index(labeled.cloud);
    scenes.push_back(
        {scene_json.value("name", "scene" + std::to_string(scenes.size())), std::move(labeled),
         std::move(index)});
  }

  std::ostringstream csv;
  csv << "config,scene,order,weights,offsets,truncation,rmse_deg,mean_deg,n_queries\n";
  for (const auto& config_json : suite.at("configs")) {
    const EstimatorSpec spec = estimator_from_json(config_json.at("estimator"));
    const EstimatorConfig config = make_estimator_config(spec);
    const std::string name = config_json.value("name", spec.weights + "-" + spec.offsets);
    for (const auto& scene : scenes) {
      const std::vector<int> picks = spread_queries(scene.labeled.inlier_indices(), queries);
      std::vector<double> errors;
      errors.reserve(picks.size());
      for (int q : picks) {
        const NormalEstimate est = estimate_normal(scene.labeled.cloud, scene.index, q, config);
        errors.push_back(
            angle_error_deg<double>(est.normal, scene.labeled.cloud.gt_normals.col(q)));
      }
      csv << name << ',' << scene.name << ',' << spec.order << ',' << spec.weights << ','
          << spec.offsets << ',' << csv_double(spec.truncation) << ','
          << csv_double(rmse_deg(errors)) << ',' << csv_double(mean_abs_deg(errors)) << ','
          << errors.size() << '\n';
    }
  }
  write_text_file(options.out_path, csv.str());

  json inputs;
  inputs["suite"] = options.suite_path;
  json config;
  config["queries_per_scene"] = queries;
  config["out"] = options.out_path;
  write_manifest(options.out_path + ".manifest.json", "ablate", config, inputs,
                 {fs::path(options.out_path).filename().string()});
}

void run_sensitivity(const SensitivityOptions& options) {
  const PointCloud cloud = load_cloud(options.input_path);
  if (options.query < 0 || options.query >= cloud.size())
    throw std::invalid_argument("sensitivity: query index out of range");
  const KdTree index = build_index(cloud);
  const EstimatorConfig config = make_estimator_config(options.estimator);

  const ScaleChain chain = config.scale_chain.clamped(static_cast<int>(cloud.size()));
  const Neighborhood nbhd = neighborhood(index, options.query, chain.smallest());
  const TangentFrame frame = pca_frame(cloud, nbhd);
  const LocalPatch patch = to_local(frame, cloud, nbhd);

  Eigen::VectorXd weights;
  if (const auto* gauss = std::get_if<GaussianDistanceWeights>(&config.weights)) {
    const double h = gauss->bandwidth * std::max(patch_radius(patch), 1e-300);
    weights.resize(patch.size());
    for (Eigen::Index i = 0; i < patch.size(); ++i)
      weights[i] = std::exp(-0.5 * patch.coords.col(i).squaredNorm() / (h * h));
  } else if (const auto* irls = std::get_if<IrlsWeights>(&config.weights)) {
    weights = irls_weights(patch, config.order, irls->kernel, irls->iterations, irls->scale);
  } else {
    weights = Eigen::VectorXd::Ones(patch.size());
  }

  FitProblem problem{patch, config.order, weights, Eigen::Matrix3Xd()};
  const JetCoefficients coeffs = wls_fit(problem);
  const SensitivityReport report = sensitivity_report(problem, coeffs);

  // Central finite differences of the full damped solve, for the agreement
  // column; w - h is clamped at zero. The agreement denominator is floored
  // at a fraction of the largest derivative so on-surface points (true
  // derivative ~0) report FD noise against the problem scale, not 0/0.
  const double h = options.fd_step;
  Eigen::Matrix3Xd fd(3, patch.size());
  for (Eigen::Index i = 0; i < patch.size(); ++i) {
    FitProblem plus = problem;
    plus.weights[i] += h;
    FitProblem minus = problem;
    minus.weights[i] = std::max(0.0, minus.weights[i] - h);
    const double dw = plus.weights[i] - minus.weights[i];
    fd.col(i) = (normal_from_jet(wls_fit(plus)) - normal_from_jet(wls_fit(minus))) / dw;
  }
  const double scale = std::max(fd.colwise().norm().maxCoeff(), 1e-12);
  std::ostringstream csv;
  csv << "index,point_index,residual,dbeta_norm,dnormal_norm,fd_dnormal_norm,rel_error\n";
  for (Eigen::Index i = 0; i < patch.size(); ++i) {
    const Eigen::Vector3d analytic = report.dnormal_dw.col(i);
    const double denom = std::max(std::max(fd.col(i).norm(), analytic.norm()), 1e-3 * scale);
    csv << i << ',' << nbhd.indices[static_cast<std::size_t>(i)] << ','
        << csv_double(report.residuals[i]) << ',' << csv_double(report.dbeta_dw.col(i).norm())
        << ',' << csv_double(analytic.norm()) << ',' << csv_double(fd.col(i).norm()) << ','
        << csv_double((analytic - fd.col(i)).norm() / denom) << '\n';
  }
  write_text_file(options.out_path, csv.str());

  json inputs;
  inputs["cloud"] = options.input_path;
  json config_json;
  config_json["estimator"] = estimator_to_json(options.estimator);
  config_json["query"] = options.query;
  config_json["fd_step"] = options.fd_step;
  config_json["out"] = options.out_path;
  write_manifest(options.out_path + ".manifest.json", "sensitivity", config_json, inputs,
                 {fs::path(options.out_path).filename().string()});
}

void run_train(const TrainOptions& options) {
  std::vector<fs::path> scene_files;
  for (const auto& entry : fs::directory_iterator(options.data_dir))
    if (entry.path().extension() == ".xyz") scene_files.push_back(entry.path());
  std::sort(scene_files.begin(), scene_files.end());
  if (scene_files.empty()) throw IoError("no .xyz scenes in " + options.data_dir);

  net::FitNetConfig net_config;
  net_config.order = JetOrder(options.order);
  net_config.scales = options.scales;
  net_config.feature_width = options.feature_width;
  net_config.seed = options.init_seed;
  net::FitNet model = net::make_fitnet(net_config);

  Rng patch_rng(options.train_seed);
  std::vector<net::TrainPatch> dataset;
  for (const auto& xyz : scene_files) {
    PointCloud cloud;
    cloud.points = read_xyz(xyz.string());
    fs::path normals_path = xyz;
    normals_path.replace_extension(".normals");
    cloud.gt_normals = read_normals(normals_path.string());
    if (cloud.gt_normals.cols() != cloud.points.cols())
      throw IoError("point/normal count mismatch for " + xyz.string());
    std::vector<std::uint8_t> mask;
    fs::path mask_path = xyz;
    mask_path.replace_extension(".outliers");
    if (fs::exists(mask_path)) mask = read_mask(mask_path.string());
    const KdTree index = build_index(cloud);
    auto patches = net::extract_patches(cloud, index, model.scales, options.queries_per_scene,
                                        patch_rng, mask);
    dataset.insert(dataset.end(), patches.begin(), patches.end());
  }

  net::TrainConfig train_config;
  train_config.steps = options.steps;
  train_config.learning_rate = options.learning_rate;
  train_config.seed = options.train_seed;
  const net::TrainReport report = net::train_toy(model, dataset, train_config);

  fs::create_directories(options.out_dir);
  const fs::path base = fs::path(options.out_dir) / options.name;
  net::save_model(base.string() + ".jfn", model);
  std::ostringstream csv;
  csv << "step,total,sin,offset_penalty\n";
  for (const auto& row : report.curve)
    csv << static_cast<long long>(row[0]) << ',' << csv_double(row[1]) << ','
        << csv_double(row[2]) << ',' << csv_double(row[3]) << '\n';
  write_text_file(base.string() + ".loss.csv", csv.str());

  json inputs;
  inputs["data_dir"] = options.data_dir;
  json config;
  config["steps"] = options.steps;
  config["learning_rate"] = options.learning_rate;
  config["train_seed"] = options.train_seed;
  config["init_seed"] = options.init_seed;
  config["scales"] = options.scales;
  config["feature_width"] = options.feature_width;
  config["order"] = options.order;
  config["queries_per_scene"] = options.queries_per_scene;
  config["optimizer"] = "adam(0.9,0.999,1e-8)";
  config["initial_mean_sin"] = report.initial_mean_sin;
  config["final_mean_sin"] = report.final_mean_sin;
  config["skipped_steps"] = report.skipped_steps;
  write_manifest(base.string() + ".manifest.json", "train-toy", config, inputs,
                 {options.name + ".jfn", options.name + ".loss.csv"});
}

void run_rerun(const std::string& manifest_path, const std::string& out_dir) {
  const json manifest = parse_json_text(read_text_file(manifest_path), "manifest");
  const std::string command = manifest.value("command", "");
  const json config = manifest.value("config", json::object());
  const json inputs = manifest.value("inputs", json::object());

  if (command == "synth") {
    const fs::path spec_tmp = fs::path(out_dir) / ".rerun_spec.json";
    fs::create_directories(out_dir);
    write_text_file(spec_tmp.string(), config.dump(2));
    SynthOptions options;
    options.spec_path = spec_tmp.string();
    options.out_dir = out_dir;
    options.name = fs::path(manifest_path).filename().string().substr(
        0, fs::path(manifest_path).filename().string().find(".manifest.json"));
    run_synth(options);
    fs::remove(spec_tmp);
  } else if (command == "estimate") {
    EstimateOptions options;
    options.input_path = inputs.at("cloud").get<std::string>();
    options.estimator = estimator_from_json(config.at("estimator"));
    fs::create_directories(out_dir);
    options.output_path =
        (fs::path(out_dir) / fs::path(config.at("output").get<std::string>()).filename()).string();
    if (config.contains("diagnostics"))
      options.diagnostics_path =
          (fs::path(out_dir) / fs::path(config.at("diagnostics").get<std::string>()).filename())
              .string();
    run_estimate(options);
  } else if (command == "evaluate") {
    EvaluateOptions options;
    options.pred_path = inputs.at("pred").get<std::string>();
    options.gt_path = inputs.at("gt").get<std::string>();
    if (inputs.contains("mask")) options.mask_path = inputs.at("mask").get<std::string>();
    if (inputs.contains("cloud")) options.cloud_path = inputs.at("cloud").get<std::string>();
    options.auc_max_deg = config.value("auc_max_deg", 30.0);
    fs::create_directories(out_dir);
    options.curve_path =
        (fs::path(out_dir) / fs::path(config.at("curve").get<std::string>()).filename()).string();
    if (config.contains("error_map"))
      options.error_map_path =
          (fs::path(out_dir) / fs::path(config.at("error_map").get<std::string>()).filename())
              .string();
    run_evaluate(options);
  } else if (command == "ablate") {
    AblateOptions options;
    options.suite_path = inputs.at("suite").get<std::string>();
    options.queries_per_scene = config.value("queries_per_scene", 100);
    fs::create_directories(out_dir);
    options.out_path =
        (fs::path(out_dir) / fs::path(config.at("out").get<std::string>()).filename()).string();
    run_ablate(options);
  } else if (command == "sensitivity") {
    SensitivityOptions options;
    options.input_path = inputs.at("cloud").get<std::string>();
    options.estimator = estimator_from_json(config.at("estimator"));
    options.query = config.value("query", 0);
    options.fd_step = config.value("fd_step", 1e-6);
    fs::create_directories(out_dir);
    options.out_path =
        (fs::path(out_dir) / fs::path(config.at("out").get<std::string>()).filename()).string();
    run_sensitivity(options);
  } else if (command == "train-toy") {
    TrainOptions options;
    options.data_dir = inputs.at("data_dir").get<std::string>();
    options.out_dir = out_dir;
    const std::string fname = fs::path(manifest_path).filename().string();
    options.name = fname.substr(0, fname.find(".manifest.json"));
    options.steps = config.value("steps", options.steps);
    options.learning_rate = config.value("learning_rate", options.learning_rate);
    options.train_seed = config.value("train_seed", options.train_seed);
    options.init_seed = config.value("init_seed", options.init_seed);
    options.scales = config.value("scales", options.scales);
    options.feature_width = config.value("feature_width", options.feature_width);
    options.order = config.value("order", options.order);
    options.queries_per_scene = config.value("queries_per_scene", options.queries_per_scene);
    run_train(options);
  } else {
    throw std::invalid_argument("rerun: unknown command '" + command + "' in manifest");
  }
}

}  // namespace jetfit::cli
