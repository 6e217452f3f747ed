#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmpid/aggregate.hpp"
#include "mmpid/matrix.hpp"
#include "mmpid/params.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

// Adapted NetVLAD: soft assignment -> residual sums (VLAD core) -> FC -> BN.
// There is no intra or final L2 normalization.
struct NetVladParams {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::size_t out_dim = 0;

  Matrix centers;                  // clusters x dim
  Matrix assign_w;                 // clusters x dim
  std::vector<double> assign_b;    // clusters
  Matrix post_w;                   // out_dim x (clusters * dim), input is cluster-major
  std::vector<double> post_b;      // out_dim
  std::vector<double> bn_scale;    // out_dim
  std::vector<double> bn_shift;    // out_dim

  // Not trainable.
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::size_t batches_seen = 0;
  double momentum = 0.9;
  double epsilon = 1e-5;

  // Zero weights, unit BN scale, unit running variance.
  static NetVladParams zeros(std::size_t clusters, std::size_t dim, std::size_t out_dim);

  // Random init. When `sample_frames` is non-empty, centers are drawn from it
  // and the assignment affine is set so that soft assignment starts as a
  // scaled nearest-center rule.
  void initialize(Rng& rng, std::span<const Matrix> sample_frames = {}, double assign_sharpness = 10.0);

  std::vector<TensorRef> tensors();
  bool operator==(const NetVladParams&) const = default;
};

struct VladCache {
  Matrix frames;               // K x dim
  Matrix assign;               // K x clusters, rows sum to 1
  std::vector<double> vlad;    // clusters * dim
  std::vector<double> pre_bn;  // out_dim
};

// Per-clip part before batch normalization.
VladCache netvlad_core_forward(const Matrix& frames, const NetVladParams& p);

// Accumulates parameter gradients into `grads` (same shapes as `p`) and, when
// `d_frames` is non-null, writes the gradient w.r.t. the input frames.
void netvlad_core_backward(const VladCache& cache, const NetVladParams& p, std::span<const double> d_pre_bn,
                           NetVladParams& grads, Matrix* d_frames);

struct BatchNormCache {
  Mode mode = Mode::kInfer;
  std::vector<std::vector<double>> xhat;
  std::vector<double> inv_std;
};

// Normalizes each row of `inputs` (one per clip). Train mode uses biased batch
// statistics and, when `update_running`, folds them into the running estimates
// (running = momentum * running + (1 - momentum) * batch, unbiased variance).
// Infer mode throws std::logic_error before any training batch.
std::vector<std::vector<double>> batch_norm_forward(const std::vector<std::vector<double>>& inputs,
                                                    NetVladParams& p, Mode mode, bool update_running,
                                                    BatchNormCache* cache);

// Inference-mode normalization of one vector with the running statistics.
std::vector<double> batch_norm_infer(const NetVladParams& p, std::span<const double> input);

std::vector<std::vector<double>> batch_norm_backward(const BatchNormCache& cache, const NetVladParams& p,
                                                     const std::vector<std::vector<double>>& d_out,
                                                     NetVladParams& grads);

// Whole-module forward over a batch of clips. Train mode updates the running
// statistics of `p`.
std::vector<ClipFeature> netvlad_forward(std::span<const SelectedFrames> batch, NetVladParams& p, Mode mode);
ClipFeature netvlad_forward(const SelectedFrames& frames, NetVladParams& p, Mode mode);

struct NetVladGradients {
  NetVladParams params;
  std::vector<Matrix> frames;
};

// Gradients of sum_i <upstream_i, forward_i> w.r.t. parameters and frames.
// Does not modify running statistics.
NetVladGradients netvlad_backward(std::span<const SelectedFrames> batch, const NetVladParams& p, Mode mode,
                                  const std::vector<std::vector<double>>& upstream);

}  // namespace mmpid
