#include "mmpid/netvlad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mmpid/numerics.hpp"

namespace mmpid {

NetVladParams NetVladParams::zeros(std::size_t clusters, std::size_t dim, std::size_t out_dim) {
  if (clusters == 0 || dim == 0 || out_dim == 0) throw std::invalid_argument("NetVLAD: zero-sized layer");
  NetVladParams p;
  p.clusters = clusters;
  p.dim = dim;
  p.out_dim = out_dim;
  p.centers = Matrix(clusters, dim);
  p.assign_w = Matrix(clusters, dim);
  p.assign_b.assign(clusters, 0.0);
  p.post_w = Matrix(out_dim, clusters * dim);
  p.post_b.assign(out_dim, 0.0);
  p.bn_scale.assign(out_dim, 1.0);
  p.bn_shift.assign(out_dim, 0.0);
  p.running_mean.assign(out_dim, 0.0);
  p.running_var.assign(out_dim, 1.0);
  return p;
}

void NetVladParams::initialize(Rng& rng, std::span<const Matrix> sample_frames, double assign_sharpness) {
  for (std::size_t k = 0; k < clusters; ++k) {
    auto c = centers.row(k);
    if (!sample_frames.empty()) {
      const Matrix& m = sample_frames[rng.uniform_index(sample_frames.size())];
      const auto row = m.row(rng.uniform_index(m.rows()));
      for (std::size_t i = 0; i < dim; ++i) c[i] = row[i];
    } else {
      for (double& v : c) v = rng.normal() / std::sqrt(static_cast<double>(dim));
    }
    auto w = assign_w.row(k);
    for (std::size_t i = 0; i < dim; ++i) w[i] = assign_sharpness * c[i];
    assign_b[k] = -0.5 * assign_sharpness * dot(c, c);
  }
  const double post_std = 1.0 / std::sqrt(static_cast<double>(clusters * dim));
  for (double& v : post_w.data()) v = post_std * rng.normal();
  for (double& v : post_b) v = 0.0;
  for (double& v : bn_scale) v = 1.0;
  for (double& v : bn_shift) v = 0.0;
  for (double& v : running_mean) v = 0.0;
  for (double& v : running_var) v = 1.0;
  batches_seen = 0;
}

std::vector<TensorRef> NetVladParams::tensors() {
  return {{"netvlad.centers", centers.data(), false},  {"netvlad.assign_w", assign_w.data(), true},
          {"netvlad.assign_b", assign_b, false},       {"netvlad.post_w", post_w.data(), true},
          {"netvlad.post_b", post_b, false},           {"netvlad.bn_scale", bn_scale, false},
          {"netvlad.bn_shift", bn_shift, false}};
}

VladCache netvlad_core_forward(const Matrix& frames, const NetVladParams& p) {
  if (frames.cols() != p.dim) {
    throw std::invalid_argument("netvlad: frame dim " + std::to_string(frames.cols()) + " does not match " +
                                std::to_string(p.dim));
  }
  const std::size_t n = frames.rows();
  VladCache cache;
  cache.frames = frames;
  cache.assign = Matrix(n, p.clusters);
  for (std::size_t t = 0; t < n; ++t) {
    auto a = cache.assign.row(t);
    gemv(p.assign_w, frames.row(t), a);
    for (std::size_t k = 0; k < p.clusters; ++k) a[k] += p.assign_b[k];
    softmax_inplace(a);
  }
  // Summing in a canonical frame order makes the output bit-identical under
  // any permutation of the input frames.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = frames.row(a), rb = frames.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  cache.vlad.assign(p.clusters * p.dim, 0.0);
  for (std::size_t k = 0; k < p.clusters; ++k) {
    std::span<double> v(cache.vlad.data() + k * p.dim, p.dim);
    double mass = 0.0;
    for (std::size_t t : order) {
      const double a = cache.assign(t, k);
      mass += a;
      axpy(a, frames.row(t), v);
    }
    axpy(-mass, p.centers.row(k), v);
  }
  cache.pre_bn = p.post_b;
  gemv(p.post_w, cache.vlad, cache.pre_bn, true);
  return cache;
}

void netvlad_core_backward(const VladCache& cache, const NetVladParams& p, std::span<const double> d_pre_bn,
                           NetVladParams& grads, Matrix* d_frames) {
  const std::size_t n = cache.frames.rows();
  const std::size_t kc = p.clusters;
  ger_acc(grads.post_w, d_pre_bn, cache.vlad);
  axpy(1.0, d_pre_bn, grads.post_b);
  std::vector<double> d_vlad(kc * p.dim, 0.0);
  gemv_t_acc(p.post_w, d_pre_bn, d_vlad);

  if (d_frames) *d_frames = Matrix(n, p.dim);
  std::vector<double> dv_dot_c(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    std::span<const double> dv(d_vlad.data() + k * p.dim, p.dim);
    dv_dot_c[k] = dot(dv, p.centers.row(k));
    double mass = 0.0;
    for (std::size_t t = 0; t < n; ++t) mass += cache.assign(t, k);
    axpy(-mass, dv, grads.centers.row(k));
  }
  std::vector<double> d_assign(kc);
  for (std::size_t t = 0; t < n; ++t) {
    const auto x = cache.frames.row(t);
    const auto a = cache.assign.row(t);
    double weighted = 0.0;
    for (std::size_t k = 0; k < kc; ++k) {
      std::span<const double> dv(d_vlad.data() + k * p.dim, p.dim);
      d_assign[k] = dot(dv, x) - dv_dot_c[k];
      weighted += a[k] * d_assign[k];
    }
    for (std::size_t k = 0; k < kc; ++k) {
      const double ds = a[k] * (d_assign[k] - weighted);
      axpy(ds, x, grads.assign_w.row(k));
      grads.assign_b[k] += ds;
      if (d_frames) {
        auto dx = d_frames->row(t);
        axpy(a[k], std::span<const double>(d_vlad.data() + k * p.dim, p.dim), dx);
        axpy(ds, p.assign_w.row(k), dx);
      }
    }
  }
}

std::vector<std::vector<double>> batch_norm_forward(const std::vector<std::vector<double>>& inputs,
                                                    NetVladParams& p, Mode mode, bool update_running,
                                                    BatchNormCache* cache) {
  const std::size_t n = inputs.size();
  const std::size_t d = p.out_dim;
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (mode == Mode::kInfer) {
    if (p.batches_seen == 0) {
      throw std::logic_error("netvlad: inference requested before any training batch (running statistics "
                             "are uninitialized)");
    }
    mean = p.running_mean;
    var = p.running_var;
  } else {
    if (n == 0) return {};
    for (const auto& x : inputs) axpy(1.0, x, mean);
    for (double& m : mean) m /= static_cast<double>(n);
    for (const auto& x : inputs)
      for (std::size_t i = 0; i < d; ++i) var[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
    for (double& v : var) v /= static_cast<double>(n);
    if (update_running) {
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        p.running_mean[i] = p.momentum * p.running_mean[i] + (1.0 - p.momentum) * mean[i];
        p.running_var[i] = p.momentum * p.running_var[i] + (1.0 - p.momentum) * var[i] * unbias;
      }
      ++p.batches_seen;
    }
  }
  std::vector<double> inv_std(d);
  for (std::size_t i = 0; i < d; ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + p.epsilon);

  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  if (cache) {
    cache->mode = mode;
    cache->inv_std = inv_std;
    cache->xhat.assign(n, std::vector<double>(d));
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat = (inputs[s][i] - mean[i]) * inv_std[i];
      if (cache) cache->xhat[s][i] = xhat;
      out[s][i] = p.bn_scale[i] * xhat + p.bn_shift[i];
    }
  }
  return out;
}

std::vector<double> batch_norm_infer(const NetVladParams& p, std::span<const double> input) {
  if (p.batches_seen == 0) {
    throw std::logic_error("netvlad: inference requested before any training batch (running statistics "
                           "are uninitialized)");
  }
  std::vector<double> out(p.out_dim);
  for (std::size_t i = 0; i < p.out_dim; ++i) {
    const double xhat = (input[i] - p.running_mean[i]) / std::sqrt(p.running_var[i] + p.epsilon);
    out[i] = p.bn_scale[i] * xhat + p.bn_shift[i];
  }
  return out;
}

std::vector<std::vector<double>> batch_norm_backward(const BatchNormCache& cache, const NetVladParams& p,
                                                     const std::vector<std::vector<double>>& d_out,
                                                     NetVladParams& grads) {
  const std::size_t n = d_out.size();
  const std::size_t d = p.out_dim;
  std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      sum_dy[i] += d_out[s][i];
      sum_dy_xhat[i] += d_out[s][i] * cache.xhat[s][i];
    }
  }
  axpy(1.0, sum_dy, grads.bn_shift);
  axpy(1.0, sum_dy_xhat, grads.bn_scale);

  std::vector<std::vector<double>> d_in(n, std::vector<double>(d));
  const double nn = static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      const double g = p.bn_scale[i] * cache.inv_std[i];
      if (cache.mode == Mode::kInfer) {
        d_in[s][i] = g * d_out[s][i];
      } else {
        d_in[s][i] = g * (d_out[s][i] - sum_dy[i] / nn - cache.xhat[s][i] * sum_dy_xhat[i] / nn);
      }
    }
  }
  return d_in;
}

std::vector<ClipFeature> netvlad_forward(std::span<const SelectedFrames> batch, NetVladParams& p, Mode mode) {
  std::vector<std::vector<double>> pre;
  pre.reserve(batch.size());
  for (const auto& sf : batch) pre.push_back(netvlad_core_forward(frames_matrix(sf), p).pre_bn);
  auto post = batch_norm_forward(pre, p, mode, mode == Mode::kTrain, nullptr);
  std::vector<ClipFeature> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back({batch[i].modality, std::move(post[i])});
  return out;
}

ClipFeature netvlad_forward(const SelectedFrames& frames, NetVladParams& p, Mode mode) {
  return netvlad_forward(std::span<const SelectedFrames>(&frames, 1), p, mode).front();
}

NetVladGradients netvlad_backward(std::span<const SelectedFrames> batch, const NetVladParams& p, Mode mode,
                                  const std::vector<std::vector<double>>& upstream) {
  if (upstream.size() != batch.size()) throw std::invalid_argument("netvlad_backward: batch size mismatch");
  std::vector<VladCache> caches;
  std::vector<std::vector<double>> pre;
  for (const auto& sf : batch) {
    caches.push_back(netvlad_core_forward(frames_matrix(sf), p));
    pre.push_back(caches.back().pre_bn);
  }
  NetVladParams scratch = p;
  BatchNormCache bn;
  batch_norm_forward(pre, scratch, mode, false, &bn);

  NetVladGradients g;
  g.params = NetVladParams::zeros(p.clusters, p.dim, p.out_dim);
  g.params.bn_scale.assign(p.out_dim, 0.0);
  g.params.running_var.assign(p.out_dim, 0.0);
  const auto d_pre = batch_norm_backward(bn, p, upstream, g.params);
  g.frames.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    netvlad_core_backward(caches[i], p, d_pre[i], g.params, &g.frames[i]);
  }
  return g;
}

}  // namespace mmpid
