#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmpid/model.hpp"

namespace mmpid {

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  // Peak rate; decays to zero along a half cosine over all steps.
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
};

void validate(const TrainConfig& cfg);
// Unknown keys are rejected. Keys mirror the struct fields; the nested "model"
// object mirrors ModelConfig, with "slots" given as a list of slot names.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double loss = 0.0;     // mean mini-batch loss over the epoch
  double accuracy = 0.0;
  double learning_rate = 0.0;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;      // inference-mode pass over the training set
  double final_accuracy = 0.0;
  std::size_t steps = 0;
  std::vector<EpochLog> epochs;
};

struct TrainResult {
  FusionModel model;
  TrainReport report;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch SGD with momentum on softmax cross-entropy. Deterministic for a
// given seed regardless of thread count. Throws TrainingError on divergence.
TrainResult train(std::span<const ClipInputs> train_set, const std::vector<std::string>& vocabulary,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Fills per-slot input dims from the data and trains on the train split.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Sets ModelConfig::input_dims from the first clip that has each slot.
void infer_input_dims(ModelConfig& cfg, std::span<const ClipInputs> clips);

// Mean loss and accuracy over `clips`. Models with NetVLAD use batch statistics
// per chunk of `batch_size` without touching the running estimates.
BatchStats mean_loss(FusionModel& model, std::span<const ClipInputs> clips, std::size_t batch_size, Mode mode,
                     std::size_t threads = 0);

}  // namespace mmpid
