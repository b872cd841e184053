#include "jetfit/micronet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "jetfit/error.hpp"

namespace jetfit::net {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Weight-activation normalizer; raw == 0 maps to a weight of exactly 1.
double weight_norm() { return softplus(0.0) + kWeightFloor; }

Mlp make_mlp(const std::vector<int>& widths, Rng& rng) {
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Linear layer;
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    layer.weight.resize(fan_out, fan_in);
    for (Eigen::Index j = 0; j < layer.weight.size(); ++j)
      layer.weight.data()[j] = rng.uniform(-bound, bound);
    layer.bias = VectorXd::Zero(fan_out);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

void zero_mlp(Mlp& mlp) {
  for (auto& layer : mlp.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

void collect(Mlp& mlp, std::vector<std::pair<double*, Eigen::Index>>& blocks) {
  for (auto& layer : mlp.layers) {
    blocks.emplace_back(layer.weight.data(), layer.weight.size());
    blocks.emplace_back(layer.bias.data(), layer.bias.size());
  }
}

LocalPatch fit_scale_patch(const Matrix3Xd& coords, int count) {
  LocalPatch patch;
  patch.coords = coords.leftCols(count);
  return patch;
}

}  // namespace

FitNet make_fitnet(const FitNetConfig& config) {
  if (config.feature_width < 1 || config.encoder_hidden < 1 || config.head_hidden < 1)
    throw std::invalid_argument("make_fitnet: widths must be positive");
  FitNet model;
  model.order = config.order;
  model.scales = ScaleChain(config.scales);
  if (model.scales.smallest() < config.order.coeff_count())
    throw std::invalid_argument("make_fitnet: smallest scale below the coefficient count");
  model.init_seed = config.seed;

  Rng rng(config.seed);
  const int f = config.feature_width;
  model.encoder = make_mlp({3, config.encoder_hidden, f}, rng);
  for (std::size_t k = 0; k + 1 < model.scales.scales.size(); ++k) {
    CsaLayer layer;
    layer.in_scale = model.scales.scales[k];
    layer.out_scale = model.scales.scales[k + 1];
    layer.pooled = make_mlp({f, f, f}, rng);
    layer.combine = make_mlp({2 * f, f, f}, rng);
    model.csa.push_back(std::move(layer));
  }
  model.weight_head = make_mlp({f, config.head_hidden, 1}, rng);
  model.offset_head = make_mlp({f, config.head_hidden, 3}, rng);
  return model;
}

void zero_heads(FitNet& model) {
  zero_mlp(model.weight_head);
  zero_mlp(model.offset_head);
}

FitNet zeros_like(const FitNet& model) {
  FitNet out = model;
  zero_mlp(out.encoder);
  for (auto& layer : out.csa) {
    zero_mlp(layer.pooled);
    zero_mlp(layer.combine);
  }
  zero_mlp(out.weight_head);
  zero_mlp(out.offset_head);
  return out;
}

std::vector<std::pair<double*, Eigen::Index>> param_blocks(FitNet& model) {
  std::vector<std::pair<double*, Eigen::Index>> blocks;
  collect(model.encoder, blocks);
  for (auto& layer : model.csa) {
    collect(layer.pooled, blocks);
    collect(layer.combine, blocks);
  }
  collect(model.weight_head, blocks);
  collect(model.offset_head, blocks);
  return blocks;
}

std::vector<std::pair<const double*, Eigen::Index>> param_blocks(const FitNet& model) {
  auto mutable_blocks = param_blocks(const_cast<FitNet&>(model));
  std::vector<std::pair<const double*, Eigen::Index>> blocks;
  blocks.reserve(mutable_blocks.size());
  for (auto& b : mutable_blocks) blocks.emplace_back(b.first, b.second);
  return blocks;
}

Eigen::Index param_count(const FitNet& model) {
  Eigen::Index total = 0;
  for (const auto& b : param_blocks(model)) total += b.second;
  return total;
}

MatrixXd mlp_forward(const Mlp& mlp, const MatrixXd& input, MlpCache* cache) {
  if (input.rows() != mlp.in_width())
    throw std::invalid_argument("mlp_forward: input width mismatch");
  if (cache) {
    cache->xs.clear();
    cache->xs.push_back(input);
  }
  MatrixXd x = input;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    MatrixXd z = (mlp.layers[l].weight * x).colwise() + mlp.layers[l].bias;
    x = (l + 1 < mlp.layers.size()) ? z.array().tanh().matrix() : std::move(z);
    if (cache) cache->xs.push_back(x);
  }
  return x;
}

MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache, const MatrixXd& dout, Mlp& grad) {
  MatrixXd d = dout;
  for (int l = static_cast<int>(mlp.layers.size()) - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    if (lu + 1 < mlp.layers.size())
      d = d.cwiseProduct((1.0 - cache.xs[lu + 1].array().square()).matrix());
    grad.layers[lu].weight += d * cache.xs[lu].transpose();
    grad.layers[lu].bias += d.rowwise().sum();
    d = mlp.layers[lu].weight.transpose() * d;
  }
  return d;
}

MatrixXd csa_forward(const CsaLayer& layer, const MatrixXd& features,
                     ForwardCache::CsaCache* cache) {
  if (features.cols() != layer.in_scale)
    throw std::invalid_argument("csa_forward: expected " + std::to_string(layer.in_scale) +
                                " feature columns, got " + std::to_string(features.cols()));
  const Eigen::Index f = features.rows();

  // Max-pool across all in-scale points; first maximal column wins so the
  // backward routing is deterministic.
  MatrixXd pooled(f, 1);
  std::vector<int> argmax(static_cast<std::size_t>(f), 0);
  for (Eigen::Index r = 0; r < f; ++r) {
    double best = features(r, 0);
    int arg = 0;
    for (Eigen::Index c = 1; c < features.cols(); ++c) {
      if (features(r, c) > best) {
        best = features(r, c);
        arg = static_cast<int>(c);
      }
    }
    pooled(r, 0) = best;
    argmax[static_cast<std::size_t>(r)] = arg;
  }

  const MatrixXd g = mlp_forward(layer.pooled, pooled, cache ? &cache->pooled : nullptr);

  MatrixXd combined(2 * f, layer.out_scale);
  combined.topRows(f) = g.col(0).replicate(1, layer.out_scale);
  combined.bottomRows(f) = features.leftCols(layer.out_scale);
  if (cache) cache->argmax = std::move(argmax);
  return mlp_forward(layer.combine, combined, cache ? &cache->combine : nullptr);
}

namespace {

MatrixXd csa_backward(const CsaLayer& layer, const ForwardCache::CsaCache& cache,
                      const MatrixXd& dout, CsaLayer& grad) {
  const Eigen::Index f = layer.pooled.layers.front().weight.cols();
  MatrixXd dcombined = mlp_backward(layer.combine, cache.combine, dout, grad.combine);
  const MatrixXd dg = dcombined.topRows(f).rowwise().sum();
  MatrixXd din = MatrixXd::Zero(f, layer.in_scale);
  din.leftCols(layer.out_scale) += dcombined.bottomRows(f);
  const MatrixXd dpooled = mlp_backward(layer.pooled, cache.pooled, dg, grad.pooled);
  for (Eigen::Index r = 0; r < f; ++r)
    din(r, cache.argmax[static_cast<std::size_t>(r)]) += dpooled(r, 0);
  return din;
}

}  // namespace

NetOutputs forward(const FitNet& model, const Matrix3Xd& coords, double radius,
                   ForwardCache* cache) {
  if (coords.cols() != model.scales.largest())
    throw std::invalid_argument("forward: expected " + std::to_string(model.scales.largest()) +
                                " points, got " + std::to_string(coords.cols()));
  if (!(radius > 0.0)) throw std::invalid_argument("forward: patch radius must be positive");
  if (cache) cache->csa.resize(model.csa.size());

  MatrixXd features = mlp_forward(model.encoder, coords / radius, cache ? &cache->encoder : nullptr);
  for (std::size_t l = 0; l < model.csa.size(); ++l)
    features = csa_forward(model.csa[l], features, cache ? &cache->csa[l] : nullptr);
  if (cache) cache->features = features;

  const MatrixXd raw_w =
      mlp_forward(model.weight_head, features, cache ? &cache->weight_head : nullptr);
  const MatrixXd raw_o =
      mlp_forward(model.offset_head, features, cache ? &cache->offset_head : nullptr);

  NetOutputs out;
  const double norm = weight_norm();
  out.weights.resize(raw_w.cols());
  for (Eigen::Index i = 0; i < raw_w.cols(); ++i)
    out.weights[i] = (softplus(raw_w(0, i)) + kWeightFloor) / norm;
  out.offsets = (raw_o.array().tanh() * (kOffsetBound * radius)).matrix();
  return out;
}

LossReport loss(const Vector3d& pred_normal, const Vector3d& gt_normal, const Matrix3Xd& offsets,
                double radius) {
  if (std::abs(pred_normal.norm() - 1.0) > 1e-6 || std::abs(gt_normal.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("loss: normals must be unit vectors");
  LossReport report;
  report.sin_loss = gt_normal.cross(pred_normal).norm();
  if (offsets.cols() > 0) {
    report.offset_penalty =
        offsets.colwise().squaredNorm().sum() /
        (static_cast<double>(offsets.cols()) * radius * radius);
  }
  report.total = report.sin_loss + kLambdaOffset * report.offset_penalty;
  return report;
}

StepResult evaluate_patch(const FitNet& model, const TrainPatch& patch, ForwardCache* cache) {
  StepResult step;
  step.outputs = forward(model, patch.coords, patch.radius, cache);
  const int fit_count = model.scales.smallest();
  const FitProblem problem{fit_scale_patch(patch.coords, fit_count), model.order,
                           step.outputs.weights, step.outputs.offsets};
  step.coeffs = wls_fit(problem);
  step.normal = normal_from_jet(step.coeffs);
  step.loss = loss(step.normal, patch.gt_normal, step.outputs.offsets, patch.radius);
  return step;
}

StepResult backward(const FitNet& model, const TrainPatch& patch, FitNet& grads) {
  ForwardCache cache;
  StepResult step = evaluate_patch(model, patch, &cache);

  const int fit_count = model.scales.smallest();
  const double r_full = patch.radius;
  const FitProblem problem{fit_scale_patch(patch.coords, fit_count), model.order,
                           step.outputs.weights, step.outputs.offsets};
  const auto sys = detail::build_wls_system(problem);
  const VectorXd beta_scaled = step.coeffs.beta.cwiseQuotient(sys.col_scale);
  const VectorXd resid = sys.z - sys.M * beta_scaled;

  // d(sin loss)/d(normal); zero at the (non-differentiable) parallel optimum.
  const Vector3d crossed = patch.gt_normal.cross(step.normal);
  Vector3d dnormal = Vector3d::Zero();
  if (step.loss.sin_loss > 1e-12)
    dnormal = (crossed / step.loss.sin_loss).cross(patch.gt_normal);

  // Through the normalization of (-b1, -b2, 1), then the solve adjoint.
  const Eigen::Matrix<double, 3, 2> jac = normal_jacobian(step.coeffs);
  VectorXd dbeta = VectorXd::Zero(step.coeffs.beta.size());
  dbeta[1] = jac.col(0).dot(dnormal);
  dbeta[2] = jac.col(1).dot(dnormal);
  const VectorXd gbar = sys.solve_refined(VectorXd(sys.col_scale.cwiseProduct(dbeta)));
  const VectorXd mg = sys.M * gbar;

  VectorXd dweights(fit_count);
  Matrix3Xd doffsets = Matrix3Xd::Zero(3, fit_count);
  Eigen::Matrix<double, 1, Eigen::Dynamic> dmx, dmy;
  for (int i = 0; i < fit_count; ++i) {
    dweights[i] = mg[i] * resid[i];
    // Row gradient of the design matrix: w_i (resid_i gbar - mg_i beta).
    const VectorXd row_grad = sys.w[i] * (resid[i] * gbar - mg[i] * beta_scaled);
    monomial_row_derivatives(model.order, sys.u[i], sys.v[i], dmx, dmy);
    doffsets(0, i) = dmx.dot(row_grad) / sys.radius;
    doffsets(1, i) = dmy.dot(row_grad) / sys.radius;
    doffsets(2, i) = sys.w[i] * mg[i] / sys.radius;
  }
  step.dloss_dweights = dweights;

  // Offset-magnitude penalty.
  doffsets += (2.0 * kLambdaOffset / (fit_count * r_full * r_full)) * step.outputs.offsets;

  // Head activations: normalized softplus for weights, bounded tanh for
  // offsets.
  const MatrixXd& raw_w = cache.weight_head.xs.back();
  const MatrixXd& raw_o = cache.offset_head.xs.back();
  MatrixXd draw_w(1, fit_count);
  const double norm = weight_norm();
  for (int i = 0; i < fit_count; ++i) draw_w(0, i) = dweights[i] * sigmoid(raw_w(0, i)) / norm;
  const MatrixXd draw_o =
      doffsets.cwiseProduct((1.0 - raw_o.array().tanh().square()).matrix()) *
      (kOffsetBound * r_full);

  MatrixXd dfeatures = mlp_backward(model.weight_head, cache.weight_head, draw_w, grads.weight_head);
  dfeatures += mlp_backward(model.offset_head, cache.offset_head, draw_o, grads.offset_head);
  for (int l = static_cast<int>(model.csa.size()) - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    dfeatures = csa_backward(model.csa[lu], cache.csa[lu], dfeatures, grads.csa[lu]);
  }
  mlp_backward(model.encoder, cache.encoder, dfeatures, grads.encoder);
  return step;
}

double mean_sin_loss(const FitNet& model, const std::vector<TrainPatch>& dataset) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& patch : dataset) {
    try {
      sum += evaluate_patch(model, patch).loss.sin_loss;
      ++counted;
    } catch (const SingularFitError&) {
    }
  }
  if (counted == 0) throw Error("mean_sin_loss: every patch failed to fit");
  return sum / counted;
}

TrainReport train_toy(FitNet& model, const std::vector<TrainPatch>& dataset,
                      const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train_toy: empty dataset");
  if (config.steps < 0) throw std::invalid_argument("train_toy: negative step count");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("train_toy: learning rate <= 0");

  TrainReport report;
  report.initial_mean_sin = mean_sin_loss(model, dataset);

  auto blocks = param_blocks(model);
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.second;
  VectorXd m = VectorXd::Zero(total), v = VectorXd::Zero(total);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Rng rng(config.seed);
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const auto reshuffle = [&] {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = rng.index(i + 1);
      std::swap(order[i], order[static_cast<std::size_t>(j)]);
    }
  };

  int applied = 0;
  for (int step = 0; step < config.steps; ++step) {
    const std::size_t pos = static_cast<std::size_t>(step) % dataset.size();
    if (pos == 0) reshuffle();
    const auto& patch = dataset[static_cast<std::size_t>(order[pos])];

    FitNet grads = zeros_like(model);
    StepResult result;
    try {
      result = backward(model, patch, grads);
    } catch (const SingularFitError&) {
      ++report.skipped_steps;
      continue;
    }
    if (!std::isfinite(result.loss.total))
      throw Error("train_toy: loss diverged at step " + std::to_string(step));

    ++applied;
    const auto grad_blocks = param_blocks(grads);
    const double bc1 = 1.0 - std::pow(kBeta1, applied);
    const double bc2 = 1.0 - std::pow(kBeta2, applied);
    Eigen::Index off = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      double* p = blocks[b].first;
      const double* g = grad_blocks[b].first;
      for (Eigen::Index i = 0; i < blocks[b].second; ++i) {
        const Eigen::Index k = off + i;
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[i];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= config.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kEps);
      }
      off += blocks[b].second;
    }
    report.curve.push_back({static_cast<double>(step), result.loss.total, result.loss.sin_loss,
                            result.loss.offset_penalty});
  }
  report.final_mean_sin = mean_sin_loss(model, dataset);
  return report;
}

void save_model(const std::string& path, const FitNet& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto mlp_dims = [](const Mlp& mlp) {
    std::ostringstream ss;
    ss << mlp.layers.size();
    for (const auto& layer : mlp.layers) ss << ' ' << layer.weight.cols() << ' ' << layer.weight.rows();
    return ss.str();
  };
  out << "JETFITNET 1\n";
  out << "seed " << model.init_seed << "\n";
  out << "order " << model.order.n << "\n";
  out << "scales " << model.scales.scales.size();
  for (int s : model.scales.scales) out << ' ' << s;
  out << "\n";
  out << "encoder " << mlp_dims(model.encoder) << "\n";
  out << "csa " << model.csa.size() << "\n";
  for (const auto& layer : model.csa) {
    out << "csa_pooled " << mlp_dims(layer.pooled) << "\n";
    out << "csa_combine " << mlp_dims(layer.combine) << "\n";
  }
  out << "weight_head " << mlp_dims(model.weight_head) << "\n";
  out << "offset_head " << mlp_dims(model.offset_head) << "\n";
  out << "params " << param_count(model) << "\n";
  out << "DATA\n";
  for (const auto& block : param_blocks(model))
    out.write(reinterpret_cast<const char*>(block.first),
              static_cast<std::streamsize>(block.second) * static_cast<std::streamsize>(sizeof(double)));
  if (!out) throw IoError("write failure on " + path);
}

namespace {

Mlp read_mlp_dims(std::istringstream& ss) {
  std::size_t layers = 0;
  if (!(ss >> layers)) throw IoError("model file: bad MLP layer count");
  Mlp mlp;
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::Index in = 0, outw = 0;
    if (!(ss >> in >> outw) || in < 1 || outw < 1) throw IoError("model file: bad MLP dims");
    Linear layer;
    layer.weight = MatrixXd::Zero(outw, in);
    layer.bias = VectorXd::Zero(outw);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

std::istringstream expect_line(std::istream& in, const std::string& keyword) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("model file: truncated header");
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != keyword) throw IoError("model file: expected '" + keyword + "', got '" + word + "'");
  return ss;
}

}  // namespace

FitNet load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "JETFITNET 1")
    throw IoError("not a jetfit model file: " + path);

  FitNet model;
  {
    auto ss = expect_line(in, "seed");
    ss >> model.init_seed;
  }
  {
    auto ss = expect_line(in, "order");
    int n = 0;
    ss >> n;
    model.order = JetOrder(n);
  }
  {
    auto ss = expect_line(in, "scales");
    std::size_t count = 0;
    ss >> count;
    std::vector<int> scales(count);
    for (auto& s : scales)
      if (!(ss >> s)) throw IoError("model file: bad scale list");
    model.scales = ScaleChain(scales);
  }
  {
    auto ss = expect_line(in, "encoder");
    model.encoder = read_mlp_dims(ss);
  }
  std::size_t csa_count = 0;
  {
    auto ss = expect_line(in, "csa");
    ss >> csa_count;
  }
  if (csa_count + 1 != model.scales.scales.size())
    throw IoError("model file: CSA count does not match scale chain");
  for (std::size_t l = 0; l < csa_count; ++l) {
    CsaLayer layer;
    {
      auto ss = expect_line(in, "csa_pooled");
      layer.pooled = read_mlp_dims(ss);
    }
    {
      auto ss = expect_line(in, "csa_combine");
      layer.combine = read_mlp_dims(ss);
    }
    layer.in_scale = model.scales.scales[l];
    layer.out_scale = model.scales.scales[l + 1];
    model.csa.push_back(std::move(layer));
  }
  {
    auto ss = expect_line(in, "weight_head");
    model.weight_head = read_mlp_dims(ss);
  }
  {
    auto ss = expect_line(in, "offset_head");
    model.offset_head = read_mlp_dims(ss);
  }
  Eigen::Index declared = 0;
  {
    auto ss = expect_line(in, "params");
    ss >> declared;
  }
  if (!std::getline(in, line) || line != "DATA") throw IoError("model file: missing DATA marker");
  if (declared != param_count(model)) throw IoError("model file: parameter count mismatch");

  for (auto& block : param_blocks(model)) {
    in.read(reinterpret_cast<char*>(block.first),
            static_cast<std::streamsize>(block.second) * static_cast<std::streamsize>(sizeof(double)));
    if (!in) throw IoError("model file: truncated parameter data");
  }
  return model;
}

std::vector<TrainPatch> extract_patches(const PointCloud& cloud, const KdTree& index,
                                        const ScaleChain& scales, int count, Rng& rng,
                                        const std::vector<std::uint8_t>& exclude_mask) {
  if (!cloud.has_normals())
    throw std::invalid_argument("extract_patches: cloud has no ground-truth normals");
  if (cloud.size() < scales.largest())
    throw std::invalid_argument("extract_patches: cloud smaller than the largest scale");

  std::vector<TrainPatch> patches;
  patches.reserve(static_cast<std::size_t>(count));
  long long attempts = 0;
  const long long max_attempts = 1000LL * count + 1000;
  while (static_cast<int>(patches.size()) < count) {
    if (++attempts > max_attempts)
      throw Error("extract_patches: too many degenerate neighborhoods");
    const int q = static_cast<int>(rng.index(static_cast<std::uint64_t>(cloud.size())));
    if (!exclude_mask.empty() && exclude_mask[static_cast<std::size_t>(q)]) continue;
    Neighborhood nbhd = index.nearest(q, scales.largest());
    TangentFrame frame;
    try {
      frame = pca_frame(cloud, nbhd);
    } catch (const DegenerateFrameError&) {
      continue;
    }
    const LocalPatch local = to_local(frame, cloud, nbhd);
    TrainPatch patch;
    patch.coords = local.coords;
    patch.radius = patch_radius(local);
    if (!(patch.radius > 0.0)) continue;
    patch.gt_normal = frame.rotation * cloud.gt_normals.col(q);
    patches.push_back(std::move(patch));
  }
  return patches;
}

}  // namespace jetfit::net
