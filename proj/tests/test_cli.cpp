#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jetfit/cli.hpp"
#include "jetfit/eval.hpp"
#include "jetfit/io.hpp"
#include "test_support.hpp"

using namespace jetfit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

bool same_bytes(const std::string& a, const std::string& b) {
  return read_text_file(a) == read_text_file(b);
}

const char* kPlaneSpec = R"({
  "surface": {"type": "plane", "coeffs": [0.0, 0.4, -0.3]},
  "n_points": 300,
  "noise_sigma": 0.012,
  "seed": 17
})";

}  // namespace

TEST_CASE("scene spec parsing") {
  const SceneSpec spec = cli::parse_scene_spec(kPlaneSpec);
  CHECK(spec.n_points == 300);
  CHECK(spec.noise_sigma == 0.012);
  CHECK(spec.seed == 17);
  CHECK(std::get<PlaneSurface>(spec.surface).coeffs[1] == 0.4);

  CHECK_THROWS_AS(cli::parse_scene_spec(""), std::invalid_argument);
  CHECK_THROWS_AS(cli::parse_scene_spec("   \n"), std::invalid_argument);
  CHECK_THROWS_AS(cli::parse_scene_spec("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(cli::parse_scene_spec(R"({"surface": {"type": "nope"}})"),
                  std::invalid_argument);

  // Round trip keeps every field.
  const SceneSpec again = cli::parse_scene_spec(cli::scene_spec_to_json(spec));
  CHECK(again.noise_sigma == spec.noise_sigma);
  CHECK(again.seed == spec.seed);
}

TEST_CASE("synth writes scene files and a manifest echoing the spec") {
  TempDir dir("jetfit_cli_synth");
  write_text_file(dir.file("spec.json"), kPlaneSpec);

  cli::SynthOptions options;
  options.spec_path = dir.file("spec.json");
  options.out_dir = dir.path.string();
  options.name = "scene";
  cli::run_synth(options);

  CHECK(read_xyz(dir.file("scene.xyz")).cols() == 300);
  CHECK(read_normals(dir.file("scene.normals")).cols() == 300);
  CHECK(read_mask(dir.file("scene.outliers")).size() == 300);
  const std::string manifest = read_text_file(dir.file("scene.manifest.json"));
  CHECK(manifest.find("0.012") != std::string::npos);
  CHECK(manifest.find("\"command\": \"synth\"") != std::string::npos);
}

TEST_CASE("synth is byte-reproducible, including through rerun") {
  TempDir dir("jetfit_cli_repro");
  write_text_file(dir.file("spec.json"), kPlaneSpec);

  cli::SynthOptions options;
  options.spec_path = dir.file("spec.json");
  options.out_dir = (dir.path / "a").string();
  cli::run_synth(options);
  options.out_dir = (dir.path / "b").string();
  cli::run_synth(options);
  CHECK(same_bytes(dir.file("a/scene.xyz"), dir.file("b/scene.xyz")));
  CHECK(same_bytes(dir.file("a/scene.normals"), dir.file("b/scene.normals")));
  CHECK(same_bytes(dir.file("a/scene.outliers"), dir.file("b/scene.outliers")));

  cli::run_rerun(dir.file("a/scene.manifest.json"), (dir.path / "c").string());
  CHECK(same_bytes(dir.file("a/scene.xyz"), dir.file("c/scene.xyz")));
  CHECK(same_bytes(dir.file("a/scene.normals"), dir.file("c/scene.normals")));
  CHECK(same_bytes(dir.file("a/scene.outliers"), dir.file("c/scene.outliers")));
}

TEST_CASE("estimate: one normal per input line, coherent on a plane") {
  TempDir dir("jetfit_cli_estimate");
  write_text_file(dir.file("spec.json"), R"({
    "surface": {"type": "plane", "coeffs": [0.1, 0.5, -0.2]},
    "n_points": 200,
    "seed": 3
  })");
  cli::SynthOptions synth;
  synth.spec_path = dir.file("spec.json");
  synth.out_dir = dir.path.string();
  cli::run_synth(synth);

  cli::EstimateOptions options;
  options.input_path = dir.file("scene.xyz");
  options.output_path = dir.file("scene.pred");
  options.diagnostics_path = dir.file("scene.diag.csv");
  options.estimator.scales = {60, 30};
  options.threads = 2;
  cli::run_estimate(options);

  const Eigen::Matrix3Xd pred = read_normals(dir.file("scene.pred"));
  REQUIRE(pred.cols() == 200);
  for (Eigen::Index i = 1; i < pred.cols(); ++i)
    CHECK(testing::unoriented_angle(pred.col(i), pred.col(0)) < 1e-6);

  const std::string diag = read_text_file(dir.file("scene.diag.csv"));
  CHECK(diag.find("index,condition,effective_weights") != std::string::npos);
}

TEST_CASE("estimate on a 3-point degenerate cloud still writes fallback normals") {
  TempDir dir("jetfit_cli_tiny");
  write_text_file(dir.file("tiny.xyz"), "0 0 0\n1 0 0.1\n0 1 -0.05\n");
  cli::EstimateOptions options;
  options.input_path = dir.file("tiny.xyz");
  options.output_path = dir.file("tiny.pred");
  options.diagnostics_path = dir.file("tiny.diag.csv");
  options.threads = 1;
  cli::run_estimate(options);
  CHECK(read_normals(dir.file("tiny.pred")).cols() == 3);
  CHECK(read_text_file(dir.file("tiny.diag.csv")).find("order1") != std::string::npos);
}

TEST_CASE("malformed cloud files report the offending line") {
  TempDir dir("jetfit_cli_badfile");
  write_text_file(dir.file("bad.xyz"), "0 0 0\n1 oops 2\n");
  try {
    read_xyz(dir.file("bad.xyz"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_text_file(dir.file("extra.xyz"), "0 0 0 7\n");
  CHECK_THROWS_AS(read_xyz(dir.file("extra.xyz")), IoError);
  write_text_file(dir.file("short.xyz"), "0 0\n");
  CHECK_THROWS_AS(read_xyz(dir.file("short.xyz")), IoError);
  CHECK_THROWS_AS(read_xyz(dir.file("missing.xyz")), IoError);
}

TEST_CASE("evaluate: identity, sign flips, and the hand-computed pair") {
  TempDir dir("jetfit_cli_eval");
  Eigen::Matrix3Xd gt(3, 2);
  gt.col(0) = Eigen::Vector3d::UnitZ();
  gt.col(1) = Eigen::Vector3d::UnitZ();
  write_normals(dir.file("gt.normals"), gt);

  cli::EvaluateOptions options;
  options.pred_path = dir.file("gt.normals");
  options.gt_path = dir.file("gt.normals");
  CHECK(cli::run_evaluate(options) == 0.0);

  write_normals(dir.file("flipped.normals"), Eigen::Matrix3Xd(-gt));
  options.pred_path = dir.file("flipped.normals");
  CHECK(cli::run_evaluate(options) == 0.0);

  Eigen::Matrix3Xd tilted(3, 2);
  const double a3 = 3.0 / kRadToDeg, a4 = 4.0 / kRadToDeg;
  tilted.col(0) << std::sin(a3), 0.0, std::cos(a3);
  tilted.col(1) << std::sin(a4), 0.0, std::cos(a4);
  write_normals(dir.file("tilted.normals"), tilted);
  options.pred_path = dir.file("tilted.normals");
  options.curve_path = dir.file("curve.csv");
  const double rmse = cli::run_evaluate(options);
  CHECK(rmse == doctest::Approx(3.5355).epsilon(1e-3));
  CHECK(read_text_file(dir.file("curve.csv")).find("threshold_deg,fraction") !=
        std::string::npos);

  write_normals(dir.file("one.normals"), Eigen::Matrix3Xd(gt.leftCols(1)));
  options.pred_path = dir.file("one.normals");
  CHECK_THROWS_AS(cli::run_evaluate(options), IoError);
}

TEST_CASE("ablate covers the grid structure") {
  TempDir dir("jetfit_cli_ablate");
  std::string suite = R"({
    "queries_per_scene": 12,
    "scenes": [
      {"name": "s0", "spec": {"surface": {"type": "quadric", "coeffs": [0,0,0,0.8,0.2,-0.5]},
        "n_points": 250, "noise_sigma": 0.004, "outlier_fraction": 0.04, "seed": 31}}
    ],
    "configs": [)";
  bool first = true;
  for (int order : {1, 2, 3}) {
    for (const char* offsets : {"none", "reproject"}) {
      if (!first) suite += ",";
      first = false;
      suite += "\n      {\"name\": \"o" + std::to_string(order) + "_" + offsets +
               "\", \"estimator\": {\"order\": " + std::to_string(order) +
               ", \"scales\": [40], \"weights\": \"gaussian\", \"offsets\": \"" + offsets +
               "\"}}";
    }
  }
  for (double t : {0.0, 0.05, 0.10, 0.30, 0.50}) {
    suite += ",\n      {\"name\": \"trunc" + std::to_string(t) +
             "\", \"estimator\": {\"order\": 3, \"scales\": [40], \"weights\": \"gaussian\","
             " \"truncation\": " +
             std::to_string(t) + "}}";
  }
  suite += "\n    ]\n}";
  write_text_file(dir.file("suite.json"), suite);

  cli::AblateOptions options;
  options.suite_path = dir.file("suite.json");
  options.out_path = dir.file("table.csv");
  cli::run_ablate(options);

  const std::string table = read_text_file(dir.file("table.csv"));
  CHECK(table.find("config,scene,order,weights,offsets,truncation,rmse_deg") != std::string::npos);
  for (const char* name : {"o1_none", "o1_reproject", "o2_none", "o2_reproject", "o3_none",
                           "o3_reproject", "trunc0.0", "trunc0.5"})
    CHECK(table.find(name) != std::string::npos);
  // One row per config x scene: header + 11 rows.
  CHECK(std::count(table.begin(), table.end(), '\n') == 12);
}

TEST_CASE("sensitivity command: agreement column and outlier ranking") {
  TempDir dir("jetfit_cli_sens");
  Rng rng(7);
  std::string xyz;
  for (int i = 0; i < 39; ++i)
    xyz += format_double(rng.uniform(-1, 1)) + " " + format_double(rng.uniform(-1, 1)) + " " +
           format_double(0.002 * rng.gaussian()) + "\n";
  xyz += "0.05 0.05 1.0\n";  // index 39: far off the plane, inside the neighborhood
  write_text_file(dir.file("cloud.xyz"), xyz);

  cli::SensitivityOptions options;
  options.input_path = dir.file("cloud.xyz");
  options.query = 0;
  options.out_path = dir.file("sens.csv");
  options.estimator.order = 2;
  options.estimator.scales = {40};
  cli::run_sensitivity(options);

  const std::string csv = read_text_file(dir.file("sens.csv"));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  CHECK(line == "index,point_index,residual,dbeta_norm,dnormal_norm,fd_dnormal_norm,rel_error");
  double best_norm = -1.0;
  int best_point = -1;
  while (std::getline(lines, line)) {
    std::vector<std::string> fields;
    std::istringstream fs(line);
    std::string field;
    while (std::getline(fs, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 7);
    CHECK(std::stod(fields[6]) < 1e-4);  // FD agreement, built into the report
    const double dn = std::stod(fields[4]);
    if (dn > best_norm) {
      best_norm = dn;
      best_point = std::stoi(fields[1]);
    }
  }
  CHECK(best_point == 39);  // the injected outlier dominates the ranking
}

TEST_CASE("train-toy: seed-deterministic models and a loss curve") {
  TempDir dir("jetfit_cli_train");
  write_text_file(dir.file("spec.json"), R"({
    "surface": {"type": "plane"},
    "n_points": 200,
    "noise_sigma": 0.01,
    "seed": 5
  })");
  cli::SynthOptions synth;
  synth.spec_path = dir.file("spec.json");
  synth.out_dir = (dir.path / "data").string();
  cli::run_synth(synth);

  cli::TrainOptions options;
  options.data_dir = (dir.path / "data").string();
  options.out_dir = (dir.path / "run1").string();
  options.steps = 20;
  options.scales = {12, 8, 6};
  options.feature_width = 8;
  options.order = 2;
  options.queries_per_scene = 16;
  cli::run_train(options);
  options.out_dir = (dir.path / "run2").string();
  cli::run_train(options);

  CHECK(same_bytes(dir.file("run1/model.jfn"), dir.file("run2/model.jfn")));
  CHECK(same_bytes(dir.file("run1/model.loss.csv"), dir.file("run2/model.loss.csv")));
  const std::string curve = read_text_file(dir.file("run1/model.loss.csv"));
  CHECK(curve.find("step,total,sin,offset_penalty") != std::string::npos);

  // Rerun from the manifest reproduces the outputs byte-exactly.
  cli::run_rerun(dir.file("run1/model.manifest.json"), (dir.path / "run3").string());
  CHECK(same_bytes(dir.file("run1/model.jfn"), dir.file("run3/model.jfn")));
  CHECK(same_bytes(dir.file("run1/model.loss.csv"), dir.file("run3/model.loss.csv")));
}

TEST_CASE("estimator spec validation") {
  cli::EstimatorSpec spec;
  spec.weights = "nonsense";
  CHECK_THROWS_AS(cli::make_estimator_config(spec), std::invalid_argument);
  spec.weights = "learned";
  CHECK_THROWS_AS(cli::make_estimator_config(spec), std::invalid_argument);  // no model path
  spec.weights = "uniform";
  spec.offsets = "sideways";
  CHECK_THROWS_AS(cli::make_estimator_config(spec), std::invalid_argument);
}
