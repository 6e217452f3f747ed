#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmpid/dataset.hpp"
#include "mmpid/fusion.hpp"
#include "mmpid/netvlad.hpp"
#include "mmpid/params.hpp"

namespace mmpid {

struct ModelConfig {
  std::size_t feature_dim = 512;    // D
  std::size_t attention_dim = 64;   // reduced dimension of W_F
  double gamma = 0.05;
  bool gamma_trainable = false;
  // false: the feature map goes straight to the classifier (O = X).
  bool use_mma = true;
  std::size_t netvlad_clusters = 8;
  // 0: single affine classifier; otherwise one ReLU hidden layer of this width.
  std::size_t hidden_units = 0;
  std::size_t frames_per_clip = 32;
  // Seed for frame resampling; independent of the training seed so that
  // ensemble members see identical inputs.
  std::uint64_t selection_seed = 7;
  SlotMask slots = {true, true, true, true, true, true};
  // Raw input dimension per slot; slot 0 holds the face frame dimension.
  std::array<std::size_t, kSlotCount> input_dims{};
  std::size_t num_classes = 0;

  bool operator==(const ModelConfig&) const = default;
};

// Clip data after frame selection and pooling; the trainable part starts here.
struct ClipInputs {
  std::string clip_id;
  int identity = kDistractor;
  Matrix face_frames;  // K x d selected face frames (empty when face is absent)
  std::array<std::vector<double>, kSlotCount> pooled;  // slot 0 unused
  SlotMask present{};
};

// Selects the top-K frames of face/head/body, pools them and passes the audio
// embedding through. Resampling draws from a generator seeded by
// (selection_seed, clip_id).
ClipInputs prepare_inputs(const ClipRecord& clip, std::size_t frames_per_clip, std::uint64_t selection_seed);
std::vector<ClipInputs> prepare_inputs(std::span<const ClipRecord* const> clips, const ModelConfig& config,
                                       std::size_t threads = 0);

struct Affine {
  Matrix w;               // out x in
  std::vector<double> b;  // out

  bool operator==(const Affine&) const = default;
};

struct FusionParams {
  NetVladParams netvlad;  // unused when slot 0 is disabled
  std::array<Affine, kSlotCount> mapping;  // mapping[0] unused: NetVLAD already emits D
  Matrix w_f;             // attention_dim x D
  double gamma = 0.0;
  Affine hidden;          // empty when hidden_units == 0
  Affine classifier;      // C x (D * kSlotCount) or C x hidden_units

  // Trainable tensors in a fixed order. gamma is included only if requested.
  std::vector<TensorRef> tensors(bool include_gamma);
  FusionParams zeros_like() const;
  void set_zero();
  void add(const FusionParams& other);

  bool operator==(const FusionParams&) const = default;
};

struct BatchStats {
  double loss = 0.0;  // mean cross-entropy
  std::size_t correct = 0;
  std::size_t count = 0;
};

class FusionModel {
 public:
  FusionModel() = default;
  // Random initialization from `seed`. `init_sample` seeds the NetVLAD centers.
  FusionModel(ModelConfig config, std::vector<std::string> vocabulary, std::uint64_t seed,
              std::span<const ClipInputs> init_sample = {});

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  std::uint64_t seed() const { return seed_; }
  FusionParams& params() { return params_; }
  const FusionParams& params() const { return params_; }
  bool uses_netvlad() const { return config_.slots[0]; }

  // Maps each present slot to R^D. Slot 0 takes the NetVLAD output as-is.
  // Disabled or absent slots become zero columns. Throws std::invalid_argument
  // naming the slot on a dimension mismatch.
  ModalityFeatureMap map_features(const std::array<std::span<const double>, kSlotCount>& slot_features) const;

  // Applies MMA (or passes X through when use_mma is off).
  Matrix fuse(const Matrix& x, MmaCache* cache = nullptr) const;

  // Flattens O column-major and returns class probabilities.
  std::vector<double> classify(const Matrix& o) const;
  std::vector<double> logits(const Matrix& o) const;

  // Probabilities for a set of clips in inference mode.
  std::vector<std::vector<double>> predict(std::span<const ClipInputs> clips, std::size_t threads = 0) const;
  // Mean attention matrix Y over `clips` (inference mode).
  Matrix average_attention(std::span<const ClipInputs> clips, std::size_t threads = 0) const;

  // Mean cross-entropy over the batch; accumulates d(loss)/d(params) into
  // `grads` when non-null. Train mode uses batch statistics for the NetVLAD
  // batch norm and updates the running estimates if `update_running`.
  BatchStats loss_and_grad(std::span<const ClipInputs* const> batch, FusionParams* grads, Mode mode,
                           bool update_running, std::size_t threads = 0);

  // Every serialized tensor (trainables, gamma and NetVLAD running stats) in
  // checkpoint order, with shapes.
  struct StateTensor {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    std::span<double> values;
  };
  std::vector<StateTensor> state();
  std::size_t netvlad_batches_seen() const { return params_.netvlad.batches_seen; }
  void set_netvlad_batches_seen(std::size_t n) { params_.netvlad.batches_seen = n; }

 private:
  struct Forward;
  Forward forward_clip(const ClipInputs& clip, const std::vector<double>* vlad_feature) const;

  ModelConfig config_;
  std::vector<std::string> vocabulary_;
  std::uint64_t seed_ = 0;
  FusionParams params_;
};

// Element-wise sum of per-model probabilities (not renormalized). Models must
// share a vocabulary; each model prepares inputs with its own selection config.
std::vector<std::vector<double>> ensemble_predict(std::span<const FusionModel> models,
                                                  std::span<const ClipRecord* const> clips,
                                                  std::size_t threads = 0);
std::vector<double> ensemble_predict(std::span<const FusionModel> models, const ClipRecord& clip);

}  // namespace mmpid
