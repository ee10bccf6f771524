#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "archscale/data.hpp"
#include "archscale/graph.hpp"
#include "archscale/scaling.hpp"

namespace archscale {

/// Feature maps are channels x (pixels * batch); sample b owns columns
/// [b*pixels, (b+1)*pixels). A dense MLP is the pixels == 1 case.
using Tensor = Eigen::MatrixXd;

/// Learning-rate rule for output edges. Hidden edges and all biases of
/// hidden edges always use the plan LR.
enum class OutputLr {
  MeanField,  ///< lr / width: keeps the one-step output change O(1) in width
  Uniform,    ///< lr, literally the same step for every parameter
};

/// Kernel sizes and nonlinearities are properties of the edges of dag; use
/// with_uniform_kernel / with_activation to set them network-wide.
struct NetworkConfig {
  Dag dag;
  int width = 64;           ///< channels of every hidden vertex
  int pixels = 1;           ///< m; 1 for MLPs
  int input_channels = 0;   ///< channels of vertex 0; 0 means width
  int output_dim = 1;       ///< channels of the output vertex
  bool bias = false;
  OutputInit output_init = OutputInit::MeanField;
  OutputLr output_lr = OutputLr::MeanField;

  int channels(VertexId v) const noexcept;
  int in_channels() const noexcept { return input_channels > 0 ? input_channels : width; }
};

/// Throws ShapeMismatch / KernelTooLarge / InvalidArgument when the config
/// cannot be evaluated (e.g. an identity edge between vertices of different
/// channel counts).
void check_config(const NetworkConfig& config);

struct EdgeParams {
  VertexId src = 0;
  VertexId dst = 0;
  int kernel = 1;
  Eigen::MatrixXd weight;  ///< channels(dst) x (kernel * channels(src))
  Eigen::VectorXd bias;    ///< channels(dst), empty when biases are off

  friend bool operator==(const EdgeParams&, const EdgeParams&) = default;
};

/// One entry per weighted edge, in the dag's canonical edge order.
struct Params {
  std::vector<EdgeParams> edges;

  const EdgeParams* find(VertexId src, VertexId dst) const noexcept;
  std::size_t size() const noexcept;  ///< total scalar count
  bool all_finite() const;

  friend bool operator==(const Params&, const Params&) = default;
};

using Grads = Params;

/// Gaussian weights with variance C / (kernel * channels(src)) on hidden
/// edges; output edges additionally divide by width under mean-field init.
/// Biases start at 0. Each edge draws from its own stream derived from
/// (seed, src, dst), so results are bit-reproducible and independent of
/// which other edges exist. Throws PlanMismatch if the plan misses a
/// weighted edge or names a non-weighted one.
Params initialize(const NetworkConfig& config, const ScalingPlan& plan, std::uint64_t seed);

/// Stride-1, zero-padded window extraction. Row ch*q + k of the result
/// holds channel ch shifted by k - (q-1)/2 pixels. Padding never crosses
/// sample boundaries. Throws KernelTooLarge when q > 2*pixels - 1 and
/// InvalidArgument for even q.
Tensor patchify(const Tensor& z, int q, int pixels);
inline Tensor patchify(const Tensor& z, int q) { return patchify(z, q, static_cast<int>(z.cols())); }

/// Adjoint of patchify (scatter-add back to channels x (pixels*batch)).
Tensor unpatchify(const Tensor& patches, int q, int pixels);

/// Zero-padded window-q mean (count includes padding).
Tensor avg_pool(const Tensor& z, int q, int pixels);

double relu(double x) noexcept;
double relu_grad(double x) noexcept;  ///< 0 at x == 0
double gelu(double x) noexcept;       ///< x * Phi(x)
double gelu_grad(double x) noexcept;

/// Per-vertex pre-activations; vertices without edges stay empty.
struct ActivationRecord {
  std::vector<Tensor> z;
  int batch = 0;
};

/// Evaluates every active vertex in topological order. x must be
/// in_channels x (pixels * batch). Throws ShapeMismatch.
ActivationRecord forward(const Params& params, const Tensor& x, const NetworkConfig& config);

/// Network prediction per sample: the output vertex averaged over pixels,
/// output_dim x batch.
Tensor readout(const ActivationRecord& record, const NetworkConfig& config);

/// (1/batch) * sum 0.5 * ||pred - y||^2. Throws ShapeMismatch.
double mse_loss(const Tensor& pred, const Tensor& y, int batch);
inline double mse_loss(const Tensor& pred, const Tensor& y) {
  return mse_loss(pred, y, static_cast<int>(y.cols()));
}

/// Exact gradients of mse_loss(readout(forward(x)), y) w.r.t. every weight
/// and bias.
Grads backward(const Params& params, const ActivationRecord& record, const Tensor& x,
               const Tensor& y, const NetworkConfig& config);

/// mu <- mu - lr * grad(mu) for every parameter.
Params sgd_step(const Params& params, const Grads& grads, double lr);

/// Same update, with output edges using the config's OutputLr rule.
Params sgd_step(const Params& params, const Grads& grads, double lr, const NetworkConfig& config);

struct TrainOptions {
  int batch_size = 16;
  std::uint64_t shuffle_seed = 0;
  /// Batch losses above this count as divergence too. Targets are
  /// normalized, so an O(1) loss is typical; a blown-up ReLU network can
  /// otherwise collapse to all-dead units and report a finite loss again.
  double divergence_loss = 1e8;
};

struct TrainResult {
  Params params;
  std::vector<double> loss_trace;  ///< per batch, before the update
  bool diverged = false;  ///< trace ends at the first non-finite or blown-up loss
};

/// One pass of SGD over the dataset in a seeded random order.
TrainResult train_one_epoch(const Params& params, const Dataset& data, double lr,
                            const NetworkConfig& config, const TrainOptions& opts = {});

/// Mean loss over the whole dataset (evaluated in chunks).
double evaluate_loss(const Params& params, const Dataset& data, const NetworkConfig& config);

/// Gather samples idx into a batch input / target pair.
Tensor gather_inputs(const Dataset& data, const std::vector<std::size_t>& idx);
Tensor gather_targets(const Dataset& data, const std::vector<std::size_t>& idx);

/// "step,loss" with the divergence marker written as loss "diverged".
void write_loss_trace(std::ostream& os, const TrainResult& result);

/// Flat little-endian float64 archive plus a text manifest with one line per
/// tensor: "name src dst rows cols offset" (offset in elements).
void save_params(const Params& params, const std::filesystem::path& bin,
                 const std::filesystem::path& manifest);
Params load_params(const std::filesystem::path& bin, const std::filesystem::path& manifest);

}  // namespace archscale
