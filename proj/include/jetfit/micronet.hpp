#ifndef JETFIT_MICRONET_HPP
#define JETFIT_MICRONET_HPP

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jetfit/cloud.hpp"
#include "jetfit/jet.hpp"
#include "jetfit/random.hpp"
#include "jetfit/tangent.hpp"

namespace jetfit::net {

using Eigen::Matrix3Xd;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Affine map applied per column: y = W x + b.
struct Linear {
  MatrixXd weight;
  VectorXd bias;
};

/// Stack of Linear layers with tanh between them; the last layer is linear.
struct Mlp {
  std::vector<Linear> layers;

  int in_width() const { return static_cast<int>(layers.front().weight.cols()); }
  int out_width() const { return static_cast<int>(layers.back().weight.rows()); }
};

/// Scale-aggregation layer: max-pool over all in_scale features, transform
/// the pooled vector, concatenate it onto each of the first out_scale
/// per-point features, and mix.
struct CsaLayer {
  Mlp pooled;   // acts on the max-pooled feature vector
  Mlp combine;  // acts on [pooled transform; per-point feature]
  int in_scale = 0;
  int out_scale = 0;
};

struct FitNetConfig {
  JetOrder order{3};
  std::vector<int> scales{64, 32, 16};
  int feature_width = 64;
  int encoder_hidden = 32;
  int head_hidden = 32;
  std::uint64_t seed = 1;
};

/// The micro-network: shared per-point encoder, cascaded scale aggregation,
/// and two heads predicting a positive weight and a bounded offset for every
/// point of the smallest scale. Those feed the weighted jet fit that yields
/// the normal.
struct FitNet {
  Mlp encoder;
  std::vector<CsaLayer> csa;
  Mlp weight_head;
  Mlp offset_head;
  ScaleChain scales;
  JetOrder order;
  std::uint64_t init_seed = 0;
};

/// Weight activation floor and normalizer: softplus(raw) + kWeightFloor,
/// divided by the zero-input value so that freshly zeroed heads emit weights
/// of exactly 1.
inline constexpr double kWeightFloor = 1e-4;
/// Offsets are bounded to half the patch radius.
inline constexpr double kOffsetBound = 0.5;
/// Offset-magnitude penalty coefficient in the training loss.
inline constexpr double kLambdaOffset = 0.01;

FitNet make_fitnet(const FitNetConfig& config);

/// Sets every head parameter to zero: uniform weights, zero offsets, so the
/// pipeline reduces to the plain unweighted fit.
void zero_heads(FitNet& model);

/// Same-shaped model with every parameter zeroed (gradient accumulator).
FitNet zeros_like(const FitNet& model);

/// Flat (pointer, size) views over every parameter tensor, in a fixed
/// traversal order shared by the optimizer, the serializer, and tests.
std::vector<std::pair<double*, Eigen::Index>> param_blocks(FitNet& model);
std::vector<std::pair<const double*, Eigen::Index>> param_blocks(const FitNet& model);
Eigen::Index param_count(const FitNet& model);

/// Network inputs and supervision for one query point, in its tangent frame.
/// coords holds the largest-scale neighborhood, distance-sorted, query first.
struct TrainPatch {
  Matrix3Xd coords;
  double radius = 1.0;      // max norm of coords
  Vector3d gt_normal = Vector3d::UnitZ();  // unit, local frame, either sign
};

struct NetOutputs {
  VectorXd weights;    // strictly positive, one per smallest-scale point
  Matrix3Xd offsets;   // bounded by kOffsetBound * radius, local frame
};

/// Per-layer activations retained for the backward pass.
struct MlpCache {
  std::vector<MatrixXd> xs;  // xs[0] = input, xs[l+1] = output of layer l
};

struct ForwardCache {
  MlpCache encoder;
  struct CsaCache {
    std::vector<int> argmax;  // per feature row, index of the pooled maximum
    MlpCache pooled;
    MlpCache combine;
  };
  std::vector<CsaCache> csa;
  MlpCache weight_head;
  MlpCache offset_head;
  MatrixXd features;  // smallest-scale features (input to the heads)
};

/// MLP evaluation on column-stacked inputs.
MatrixXd mlp_forward(const Mlp& mlp, const MatrixXd& input, MlpCache* cache = nullptr);

/// Backward through an MLP: accumulates parameter gradients into `grad` and
/// returns the gradient with respect to the input.
MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache, const MatrixXd& dout, Mlp& grad);

/// One scale-aggregation step (Eq.-style: per-point combine of the pooled
/// transform with each retained feature). features has in_scale columns; the
/// result has out_scale columns corresponding to the nearest subset.
MatrixXd csa_forward(const CsaLayer& layer, const MatrixXd& features,
                     ForwardCache::CsaCache* cache = nullptr);

/// Weights and offsets for the smallest scale of the patch.
NetOutputs forward(const FitNet& model, const Matrix3Xd& coords, double radius,
                   ForwardCache* cache = nullptr);

struct LossReport {
  double sin_loss = 0.0;        // |N_gt x N|
  double offset_penalty = 0.0;  // mean squared offset magnitude, radius units
  double total = 0.0;           // sin_loss + kLambdaOffset * offset_penalty
};

/// Orientation-invariant normal loss plus the offset-magnitude penalty.
LossReport loss(const Vector3d& pred_normal, const Vector3d& gt_normal, const Matrix3Xd& offsets,
                double radius);

/// Everything produced by one differentiable pass over a patch.
struct StepResult {
  NetOutputs outputs;
  JetCoefficients coeffs;
  Vector3d normal = Vector3d::UnitZ();  // local frame
  LossReport loss;
  VectorXd dloss_dweights;  // dL/dw_i at the smallest scale (hand-derived)
};

/// Forward through net + fit + loss. Throws SingularFitError if the fit
/// degenerates.
StepResult evaluate_patch(const FitNet& model, const TrainPatch& patch,
                          ForwardCache* cache = nullptr);

/// Full hand-derived backward pass; accumulates parameter gradients into
/// `grads` (same shape as the model) and returns the step details.
StepResult backward(const FitNet& model, const TrainPatch& patch, FitNet& grads);

struct TrainConfig {
  int steps = 500;
  double learning_rate = 5e-4;
  std::uint64_t seed = 7;
};

struct TrainReport {
  // One row per step: step index, total loss, sin loss, offset penalty.
  std::vector<std::array<double, 4>> curve;
  double initial_mean_sin = 0.0;  // dataset mean before training
  double final_mean_sin = 0.0;    // dataset mean after training
  int skipped_steps = 0;          // singular fits skipped with diagnostics
};

/// Adam on the full parameter set, one patch per step in seeded shuffled
/// order. Deterministic for a fixed (model seed, train seed, dataset).
TrainReport train_toy(FitNet& model, const std::vector<TrainPatch>& dataset,
                      const TrainConfig& config);

/// Mean sin-loss of the model over a dataset (no training).
double mean_sin_loss(const FitNet& model, const std::vector<TrainPatch>& dataset);

/// Versioned model file: plain-text header, then raw little-endian float64
/// parameter blocks in traversal order.
void save_model(const std::string& path, const FitNet& model);
FitNet load_model(const std::string& path);

/// Samples training patches from a labeled cloud: random query points with
/// their largest-scale neighborhood mapped into the PCA tangent frame.
/// Queries flagged in exclude_mask (e.g. outliers) are skipped; degenerate
/// frames are skipped as well.
std::vector<TrainPatch> extract_patches(const PointCloud& cloud, const KdTree& index,
                                        const ScaleChain& scales, int count, Rng& rng,
                                        const std::vector<std::uint8_t>& exclude_mask = {});

}  // namespace jetfit::net

#endif  // JETFIT_MICRONET_HPP
