#include "mmpid/model.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "mmpid/aggregate.hpp"
#include "mmpid/frameselect.hpp"
#include "mmpid/numerics.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

namespace {

// Fixed so gradients do not depend on the worker count.
constexpr std::size_t kGradShards = 4;

Affine make_affine(std::size_t out, std::size_t in, double stddev, Rng& rng) {
  Affine a{Matrix(out, in), std::vector<double>(out, 0.0)};
  for (double& v : a.w.data()) v = stddev * rng.normal();
  return a;
}

Affine zeros_like(const Affine& a) { return {Matrix(a.w.rows(), a.w.cols()), std::vector<double>(a.b.size(), 0.0)}; }

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t face_slot_count() { return 3; }

}  // namespace

ClipInputs prepare_inputs(const ClipRecord& clip, std::size_t frames_per_clip, std::uint64_t selection_seed) {
  ClipInputs in;
  in.clip_id = clip.clip_id;
  in.identity = clip.identity;
  Rng rng(derive_seed(selection_seed, clip.clip_id));

  if (auto face = select_top_k(clip.stream(Modality::kFace), frames_per_clip, rng, Modality::kFace)) {
    in.face_frames = frames_matrix(*face);
    in.pooled[static_cast<std::size_t>(Slot::kFaceAvg)] = average_pool(*face).vector;
    in.pooled[static_cast<std::size_t>(Slot::kFaceQuality)] = quality_weighted_pool(*face).vector;
    for (std::size_t s = 0; s < face_slot_count(); ++s) in.present[s] = true;
  }
  const std::array<std::pair<Modality, Slot>, 2> framed = {
      {{Modality::kHead, Slot::kHead}, {Modality::kBody, Slot::kBody}}};
  for (const auto& [m, slot] : framed) {
    if (auto sel = select_top_k(clip.stream(m), frames_per_clip, rng, m)) {
      in.pooled[static_cast<std::size_t>(slot)] = average_pool(*sel).vector;
      in.present[static_cast<std::size_t>(slot)] = true;
    }
  }
  // Audio is one clip-level embedding; more than one frame is averaged.
  const auto& audio = clip.stream(Modality::kAudio);
  if (!audio.empty()) {
    auto& v = in.pooled[static_cast<std::size_t>(Slot::kAudio)];
    v.assign(audio.front().vector.size(), 0.0);
    for (const auto& f : audio)
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += f.vector[i];
    for (double& x : v) x /= static_cast<double>(audio.size());
    in.present[static_cast<std::size_t>(Slot::kAudio)] = true;
  }
  return in;
}

std::vector<ClipInputs> prepare_inputs(std::span<const ClipRecord* const> clips, const ModelConfig& config,
                                       std::size_t threads) {
  std::vector<ClipInputs> out(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    out[i] = prepare_inputs(*clips[i], config.frames_per_clip, config.selection_seed);
  });
  return out;
}

// ---------------------------------------------------------------------------
// FusionParams

std::vector<TensorRef> FusionParams::tensors(bool include_gamma) {
  std::vector<TensorRef> out;
  auto push = [&](std::string_view name, std::span<double> v, bool decay) {
    if (!v.empty()) out.push_back({name, v, decay});
  };
  if (netvlad.clusters > 0) {
    for (auto& t : netvlad.tensors()) out.push_back(t);
  }
  static constexpr std::array<std::string_view, kSlotCount> kMapW = {
      "mapping.face_vlad.w", "mapping.face_avg.w", "mapping.face_quality.w",
      "mapping.head.w",      "mapping.body.w",     "mapping.audio.w"};
  static constexpr std::array<std::string_view, kSlotCount> kMapB = {
      "mapping.face_vlad.b", "mapping.face_avg.b", "mapping.face_quality.b",
      "mapping.head.b",      "mapping.body.b",     "mapping.audio.b"};
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    push(kMapW[s], mapping[s].w.data(), true);
    push(kMapB[s], mapping[s].b, false);
  }
  push("mma.w_f", w_f.data(), true);
  if (include_gamma) push("mma.gamma", std::span<double>(&gamma, 1), false);
  push("hidden.w", hidden.w.data(), true);
  push("hidden.b", hidden.b, false);
  push("classifier.w", classifier.w.data(), true);
  push("classifier.b", classifier.b, false);
  return out;
}

FusionParams FusionParams::zeros_like() const {
  FusionParams z;
  if (netvlad.clusters > 0) {
    z.netvlad = NetVladParams::zeros(netvlad.clusters, netvlad.dim, netvlad.out_dim);
    z.netvlad.bn_scale.assign(netvlad.out_dim, 0.0);
  }
  for (std::size_t s = 0; s < kSlotCount; ++s) z.mapping[s] = mmpid::zeros_like(mapping[s]);
  z.w_f = Matrix(w_f.rows(), w_f.cols());
  z.gamma = 0.0;
  z.hidden = mmpid::zeros_like(hidden);
  z.classifier = mmpid::zeros_like(classifier);
  return z;
}

void FusionParams::set_zero() {
  for (auto& t : tensors(true))
    for (double& v : t.values) v = 0.0;
}

void FusionParams::add(const FusionParams& other) {
  auto dst = tensors(true);
  auto src = const_cast<FusionParams&>(other).tensors(true);
  if (dst.size() != src.size()) throw std::logic_error("FusionParams::add: layout mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) add_into(dst[i].values, src[i].values);
}

// ---------------------------------------------------------------------------
// FusionModel

struct FusionModel::Forward {
  ModalityFeatureMap map;
  MmaCache mma;
  std::vector<double> flat;
  std::vector<double> hidden_pre;
  std::vector<double> hidden_act;
  std::vector<double> probs;
};

FusionModel::FusionModel(ModelConfig config, std::vector<std::string> vocabulary, std::uint64_t seed,
                         std::span<const ClipInputs> init_sample)
    : config_(std::move(config)), vocabulary_(std::move(vocabulary)), seed_(seed) {
  if (config_.num_classes == 0) config_.num_classes = vocabulary_.size();
  if (config_.num_classes != vocabulary_.size()) {
    throw std::invalid_argument("FusionModel: num_classes does not match vocabulary size");
  }
  if (config_.num_classes < 2) throw std::invalid_argument("FusionModel: need at least two classes");
  if (config_.feature_dim == 0 || config_.attention_dim == 0) {
    throw std::invalid_argument("FusionModel: feature and attention dims must be positive");
  }
  if (!std::isfinite(config_.gamma)) throw std::invalid_argument("FusionModel: gamma must be finite");
  const std::size_t d = config_.feature_dim;
  Rng rng(derive_seed(seed_, std::string_view("init")));

  if (config_.slots[0]) {
    const std::size_t face_dim = config_.input_dims[0];
    if (face_dim == 0) throw std::invalid_argument("FusionModel: face frame dim unknown for NetVLAD slot");
    params_.netvlad = NetVladParams::zeros(config_.netvlad_clusters, face_dim, d);
    std::vector<Matrix> sample;
    for (const auto& c : init_sample) {
      if (!c.face_frames.empty()) sample.push_back(c.face_frames);
      if (sample.size() >= 64) break;
    }
    params_.netvlad.initialize(rng, sample);
  }
  for (std::size_t s = 1; s < kSlotCount; ++s) {
    if (!config_.slots[s]) continue;
    const std::size_t in = config_.input_dims[s];
    if (in == 0) {
      throw std::invalid_argument("FusionModel: input dim unknown for slot " + std::string(slot_name(s)));
    }
    // Raw embeddings are roughly unit-norm, so unit-variance weights give
    // mapped coordinates of order one.
    params_.mapping[s] = make_affine(d, in, 1.0, rng);
  }
  if (config_.use_mma) {
    const double std_f = 1.0 / std::sqrt(static_cast<double>(d * config_.attention_dim));
    params_.w_f = Matrix(config_.attention_dim, d);
    for (double& v : params_.w_f.data()) v = std_f * rng.normal();
  }
  params_.gamma = config_.use_mma ? config_.gamma : 0.0;
  const std::size_t flat = d * kSlotCount;
  if (config_.hidden_units > 0) {
    params_.hidden = make_affine(config_.hidden_units, flat, std::sqrt(2.0 / static_cast<double>(flat)), rng);
    params_.classifier = make_affine(config_.num_classes, config_.hidden_units,
                                     1.0 / std::sqrt(static_cast<double>(config_.hidden_units)), rng);
  } else {
    params_.classifier = make_affine(config_.num_classes, flat, 1.0 / std::sqrt(static_cast<double>(flat)), rng);
  }
}

ModalityFeatureMap FusionModel::map_features(
    const std::array<std::span<const double>, kSlotCount>& slot_features) const {
  const std::size_t d = config_.feature_dim;
  ModalityFeatureMap map{Matrix(d, kSlotCount), {}};
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    const auto& feat = slot_features[s];
    if (feat.empty() || !config_.slots[s]) continue;
    const std::size_t expected = s == 0 ? d : config_.input_dims[s];
    if (feat.size() != expected) {
      throw std::invalid_argument("map_features: slot " + std::string(slot_name(s)) + " has dim " +
                                  std::to_string(feat.size()) + ", expected " + std::to_string(expected));
    }
    if (s == 0) {
      map.x.set_col(0, feat);
    } else {
      std::vector<double> col = params_.mapping[s].b;
      gemv(params_.mapping[s].w, feat, col, true);
      map.x.set_col(s, col);
    }
    map.present[s] = true;
  }
  return map;
}

Matrix FusionModel::fuse(const Matrix& x, MmaCache* cache) const {
  if (!config_.use_mma) return x;
  return mma_fuse(x, params_.w_f, params_.gamma, cache);
}

std::vector<double> FusionModel::logits(const Matrix& o) const {
  const auto flat = flatten_columns(o);
  std::vector<double> out = params_.classifier.b;
  if (config_.hidden_units > 0) {
    std::vector<double> h = params_.hidden.b;
    gemv(params_.hidden.w, flat, h, true);
    for (double& v : h) v = v > 0.0 ? v : 0.0;
    gemv(params_.classifier.w, h, out, true);
  } else {
    gemv(params_.classifier.w, flat, out, true);
  }
  return out;
}

std::vector<double> FusionModel::classify(const Matrix& o) const {
  auto p = logits(o);
  softmax_inplace(p);
  return p;
}

FusionModel::Forward FusionModel::forward_clip(const ClipInputs& clip, const std::vector<double>* vlad_feature) const {
  std::array<std::span<const double>, kSlotCount> feats{};
  if (vlad_feature) feats[0] = *vlad_feature;
  for (std::size_t s = 1; s < kSlotCount; ++s)
    if (clip.present[s]) feats[s] = clip.pooled[s];

  Forward fw;
  fw.map = map_features(feats);
  const Matrix o = fuse(fw.map.x, config_.use_mma ? &fw.mma : nullptr);
  fw.flat = flatten_columns(o);
  fw.probs = params_.classifier.b;
  if (config_.hidden_units > 0) {
    fw.hidden_pre = params_.hidden.b;
    gemv(params_.hidden.w, fw.flat, fw.hidden_pre, true);
    fw.hidden_act = fw.hidden_pre;
    for (double& v : fw.hidden_act) v = v > 0.0 ? v : 0.0;
    gemv(params_.classifier.w, fw.hidden_act, fw.probs, true);
  } else {
    gemv(params_.classifier.w, fw.flat, fw.probs, true);
  }
  softmax_inplace(fw.probs);
  return fw;
}

std::vector<std::vector<double>> FusionModel::predict(std::span<const ClipInputs> clips, std::size_t threads) const {
  std::vector<std::vector<double>> out(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const ClipInputs& c = clips[i];
    std::vector<double> vlad;
    const bool use_vlad = uses_netvlad() && !c.face_frames.empty();
    if (use_vlad) vlad = batch_norm_infer(params_.netvlad, netvlad_core_forward(c.face_frames, params_.netvlad).pre_bn);
    out[i] = forward_clip(c, use_vlad ? &vlad : nullptr).probs;
  });
  return out;
}

Matrix FusionModel::average_attention(std::span<const ClipInputs> clips, std::size_t threads) const {
  if (!config_.use_mma) throw std::logic_error("average_attention: model was trained without MMA");
  if (clips.empty()) throw std::invalid_argument("average_attention: no clips");
  std::vector<Matrix> ys(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    const ClipInputs& c = clips[i];
    std::vector<double> vlad;
    const bool use_vlad = uses_netvlad() && !c.face_frames.empty();
    if (use_vlad) vlad = batch_norm_infer(params_.netvlad, netvlad_core_forward(c.face_frames, params_.netvlad).pre_bn);
    ys[i] = forward_clip(c, use_vlad ? &vlad : nullptr).mma.y;
  });
  Matrix mean(kSlotCount, kSlotCount);
  for (const auto& y : ys) mean = mean + y;
  return (1.0 / static_cast<double>(ys.size())) * mean;
}

BatchStats FusionModel::loss_and_grad(std::span<const ClipInputs* const> batch, FusionParams* grads, Mode mode,
                                      bool update_running, std::size_t threads) {
  const std::size_t n = batch.size();
  BatchStats stats;
  stats.count = n;
  if (n == 0) return stats;
  const std::size_t d = config_.feature_dim;
  const double scale = 1.0 / static_cast<double>(n);

  // Stage 1: VLAD core per clip, then batch norm across the clips with faces.
  std::vector<std::size_t> vlad_rows(n, SIZE_MAX);
  std::vector<std::size_t> vlad_clips;
  if (uses_netvlad()) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!batch[i]->face_frames.empty()) {
        vlad_rows[i] = vlad_clips.size();
        vlad_clips.push_back(i);
      }
    }
  }
  std::vector<VladCache> vlad_caches(vlad_clips.size());
  parallel_for(vlad_clips.size(), threads, [&](std::size_t r) {
    vlad_caches[r] = netvlad_core_forward(batch[vlad_clips[r]]->face_frames, params_.netvlad);
  });
  std::vector<std::vector<double>> vlad_out;
  BatchNormCache bn_cache;
  if (!vlad_clips.empty()) {
    std::vector<std::vector<double>> pre;
    pre.reserve(vlad_caches.size());
    for (const auto& c : vlad_caches) pre.push_back(c.pre_bn);
    if (mode == Mode::kTrain) {
      vlad_out = batch_norm_forward(pre, params_.netvlad, mode, update_running, &bn_cache);
    } else {
      vlad_out = batch_norm_forward(pre, params_.netvlad, mode, false, &bn_cache);
    }
  }

  // Stage 2: per-clip fusion, classifier, loss and backward down to X.
  const std::size_t shards = std::min(kGradShards, n);
  std::vector<FusionParams> shard_grads;
  if (grads) shard_grads.assign(shards, grads->zeros_like());
  std::vector<double> losses(n, 0.0);
  std::vector<int> hits(n, 0);
  std::vector<std::vector<double>> d_vlad(vlad_clips.size());

  auto shard_range = [&](std::size_t s) {
    return std::pair<std::size_t, std::size_t>{s * n / shards, (s + 1) * n / shards};
  };

  parallel_for(shards, threads, [&](std::size_t s) {
    const auto [lo, hi] = shard_range(s);
    for (std::size_t i = lo; i < hi; ++i) {
      const ClipInputs& clip = *batch[i];
      if (clip.identity < 0 || static_cast<std::size_t>(clip.identity) >= config_.num_classes) {
        throw std::invalid_argument("loss_and_grad: clip " + clip.clip_id + " has no vocabulary label");
      }
      const std::size_t label = static_cast<std::size_t>(clip.identity);
      const std::vector<double>* vf = vlad_rows[i] == SIZE_MAX ? nullptr : &vlad_out[vlad_rows[i]];
      Forward fw = forward_clip(clip, vf);
      losses[i] = -std::log(std::max(fw.probs[label], 1e-300));
      std::size_t argmax = 0;
      for (std::size_t c = 1; c < fw.probs.size(); ++c)
        if (fw.probs[c] > fw.probs[argmax]) argmax = c;
      hits[i] = argmax == label ? 1 : 0;
      if (!grads) continue;

      FusionParams& g = shard_grads[s];
      std::vector<double> d_logits = fw.probs;
      d_logits[label] -= 1.0;
      for (double& v : d_logits) v *= scale;

      std::vector<double> d_flat(fw.flat.size(), 0.0);
      if (config_.hidden_units > 0) {
        ger_acc(g.classifier.w, d_logits, fw.hidden_act);
        add_into(g.classifier.b, d_logits);
        std::vector<double> d_hidden(fw.hidden_pre.size(), 0.0);
        gemv_t_acc(params_.classifier.w, d_logits, d_hidden);
        for (std::size_t k = 0; k < d_hidden.size(); ++k)
          if (fw.hidden_pre[k] <= 0.0) d_hidden[k] = 0.0;
        ger_acc(g.hidden.w, d_hidden, fw.flat);
        add_into(g.hidden.b, d_hidden);
        gemv_t_acc(params_.hidden.w, d_hidden, d_flat);
      } else {
        ger_acc(g.classifier.w, d_logits, fw.flat);
        add_into(g.classifier.b, d_logits);
        gemv_t_acc(params_.classifier.w, d_logits, d_flat);
      }
      const Matrix d_o = unflatten_columns(d_flat, d, kSlotCount);
      Matrix d_x;
      if (config_.use_mma) {
        mma_backward(fw.mma, params_.w_f, params_.gamma, d_o, d_x, g.w_f, g.gamma);
      } else {
        d_x = d_o;
      }
      for (std::size_t slot = 1; slot < kSlotCount; ++slot) {
        if (!fw.map.present[slot]) continue;
        const auto d_col = d_x.col(slot);
        ger_acc(g.mapping[slot].w, d_col, clip.pooled[slot]);
        add_into(g.mapping[slot].b, d_col);
      }
      if (vf) d_vlad[vlad_rows[i]] = d_x.col(0);
    }
  });

  for (std::size_t i = 0; i < n; ++i) {
    stats.loss += losses[i];
    stats.correct += static_cast<std::size_t>(hits[i]);
  }
  stats.loss *= scale;
  if (!grads) return stats;

  // Stage 3: batch-norm backward, then VLAD core backward per shard.
  if (!vlad_clips.empty()) {
    const auto d_pre = batch_norm_backward(bn_cache, params_.netvlad, d_vlad, shard_grads[0].netvlad);
    const std::size_t m = vlad_clips.size();
    const std::size_t vshards = std::min(shards, m);
    parallel_for(vshards, threads, [&](std::size_t s) {
      for (std::size_t r = s * m / vshards; r < (s + 1) * m / vshards; ++r) {
        netvlad_core_backward(vlad_caches[r], params_.netvlad, d_pre[r], shard_grads[s].netvlad, nullptr);
      }
    });
  }
  for (const auto& sg : shard_grads) grads->add(sg);
  return stats;
}

std::vector<FusionModel::StateTensor> FusionModel::state() {
  std::vector<StateTensor> out;
  auto push = [&](std::string name, std::size_t rows, std::size_t cols, std::span<double> v) {
    if (!v.empty()) out.push_back({std::move(name), rows, cols, v});
  };
  auto& nv = params_.netvlad;
  if (nv.clusters > 0) {
    push("netvlad.centers", nv.clusters, nv.dim, nv.centers.data());
    push("netvlad.assign_w", nv.clusters, nv.dim, nv.assign_w.data());
    push("netvlad.assign_b", nv.clusters, 1, nv.assign_b);
    push("netvlad.post_w", nv.out_dim, nv.clusters * nv.dim, nv.post_w.data());
    push("netvlad.post_b", nv.out_dim, 1, nv.post_b);
    push("netvlad.bn_scale", nv.out_dim, 1, nv.bn_scale);
    push("netvlad.bn_shift", nv.out_dim, 1, nv.bn_shift);
    push("netvlad.running_mean", nv.out_dim, 1, nv.running_mean);
    push("netvlad.running_var", nv.out_dim, 1, nv.running_var);
  }
  for (std::size_t s = 1; s < kSlotCount; ++s) {
    auto& a = params_.mapping[s];
    const std::string base = "mapping." + std::string(slot_name(s));
    push(base + ".w", a.w.rows(), a.w.cols(), a.w.data());
    push(base + ".b", a.b.size(), 1, a.b);
  }
  push("mma.w_f", params_.w_f.rows(), params_.w_f.cols(), params_.w_f.data());
  push("mma.gamma", 1, 1, std::span<double>(&params_.gamma, 1));
  push("hidden.w", params_.hidden.w.rows(), params_.hidden.w.cols(), params_.hidden.w.data());
  push("hidden.b", params_.hidden.b.size(), 1, params_.hidden.b);
  push("classifier.w", params_.classifier.w.rows(), params_.classifier.w.cols(), params_.classifier.w.data());
  push("classifier.b", params_.classifier.b.size(), 1, params_.classifier.b);
  return out;
}

// ---------------------------------------------------------------------------
// Ensembles

std::vector<std::vector<double>> ensemble_predict(std::span<const FusionModel> models,
                                                  std::span<const ClipRecord* const> clips, std::size_t threads) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  for (const auto& m : models) {
    if (m.vocabulary() != models.front().vocabulary()) {
      throw std::invalid_argument("ensemble_predict: models do not share an identity vocabulary");
    }
  }
  std::vector<std::vector<double>> scores(clips.size(), std::vector<double>(models.front().vocabulary().size(), 0.0));
  std::map<std::pair<std::size_t, std::uint64_t>, std::vector<ClipInputs>> prepared;
  for (const auto& m : models) {
    const auto key = std::make_pair(m.config().frames_per_clip, m.config().selection_seed);
    auto it = prepared.find(key);
    if (it == prepared.end()) it = prepared.emplace(key, prepare_inputs(clips, m.config(), threads)).first;
    const auto probs = m.predict(it->second, threads);
    for (std::size_t i = 0; i < clips.size(); ++i) add_into(scores[i], probs[i]);
  }
  return scores;
}

std::vector<double> ensemble_predict(std::span<const FusionModel> models, const ClipRecord& clip) {
  const ClipRecord* one = &clip;
  return ensemble_predict(models, std::span<const ClipRecord* const>(&one, 1), 1).front();
}

}  // namespace mmpid
