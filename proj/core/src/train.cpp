#include "mmpid/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "json.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

json model_to_json(const ModelConfig& c) {
  json slots = json::array();
  json dims = json::object();
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    if (c.slots[s]) slots.push_back(std::string(slot_name(s)));
    if (c.input_dims[s] > 0) dims[std::string(slot_name(s))] = c.input_dims[s];
  }
  return {{"feature_dim", c.feature_dim},
          {"attention_dim", c.attention_dim},
          {"gamma", c.gamma},
          {"gamma_trainable", c.gamma_trainable},
          {"use_mma", c.use_mma},
          {"netvlad_clusters", c.netvlad_clusters},
          {"hidden_units", c.hidden_units},
          {"frames_per_clip", c.frames_per_clip},
          {"selection_seed", c.selection_seed},
          {"slots", slots},
          {"input_dims", dims},
          {"num_classes", c.num_classes}};
}

ModelConfig model_from_json(const json& j) {
  reject_unknown(j,
                 {"feature_dim", "attention_dim", "gamma", "gamma_trainable", "use_mma", "netvlad_clusters",
                  "hidden_units", "frames_per_clip", "selection_seed", "slots", "input_dims", "num_classes"},
                 "model config");
  ModelConfig c;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("feature_dim", c.feature_dim);
  take("attention_dim", c.attention_dim);
  take("gamma", c.gamma);
  take("gamma_trainable", c.gamma_trainable);
  take("use_mma", c.use_mma);
  take("netvlad_clusters", c.netvlad_clusters);
  take("hidden_units", c.hidden_units);
  take("frames_per_clip", c.frames_per_clip);
  take("selection_seed", c.selection_seed);
  take("num_classes", c.num_classes);
  if (j.contains("slots")) {
    c.slots.fill(false);
    for (const auto& name : j.at("slots")) c.slots[slot_from_name(name.get<std::string>())] = true;
  }
  if (j.contains("input_dims")) {
    for (const auto& [name, v] : j.at("input_dims").items()) c.input_dims[slot_from_name(name)] = v.get<std::size_t>();
  }
  return c;
}

double cosine_rate(double peak, std::size_t step, std::size_t total) {
  if (total <= 1) return peak;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw std::invalid_argument("train config: learning_rate must be positive");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw std::invalid_argument("train config: momentum must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be non-negative");
  if (cfg.model.frames_per_clip == 0) throw std::invalid_argument("train config: frames_per_clip must be positive");
  if (cfg.model.slots[0] && cfg.model.netvlad_clusters == 0) {
    throw std::invalid_argument("train config: netvlad_clusters must be positive when face_vlad is enabled");
  }
  if (std::none_of(cfg.model.slots.begin(), cfg.model.slots.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("train config: at least one feature slot must be enabled");
  }
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return model_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    reject_unknown(j, {"model", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "seed", "threads"},
                   "train config");
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
    take("epochs", cfg.epochs);
    take("batch_size", cfg.batch_size);
    take("learning_rate", cfg.learning_rate);
    take("momentum", cfg.momentum);
    take("weight_decay", cfg.weight_decay);
    take("seed", cfg.seed);
    take("threads", cfg.threads);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j = {{"model", model_to_json(cfg.model)},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"learning_rate", cfg.learning_rate},
            {"momentum", cfg.momentum},
            {"weight_decay", cfg.weight_decay},
            {"seed", cfg.seed},
            {"threads", cfg.threads}};
  return j.dump(2);
}

void infer_input_dims(ModelConfig& cfg, std::span<const ClipInputs> clips) {
  for (const auto& c : clips) {
    if (cfg.input_dims[0] == 0 && !c.face_frames.empty()) cfg.input_dims[0] = c.face_frames.cols();
    for (std::size_t s = 1; s < kSlotCount; ++s)
      if (cfg.input_dims[s] == 0 && c.present[s]) cfg.input_dims[s] = c.pooled[s].size();
  }
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    if (cfg.slots[s] && cfg.input_dims[s] == 0) {
      // No training clip carries this slot; it stays a zero column.
      cfg.slots[s] = false;
    }
  }
}

BatchStats mean_loss(FusionModel& model, std::span<const ClipInputs> clips, std::size_t batch_size, Mode mode,
                     std::size_t threads) {
  BatchStats total;
  if (clips.empty()) return total;
  const std::size_t n = clips.size();
  const std::size_t batches = (n + batch_size - 1) / batch_size;
  std::vector<const ClipInputs*> ptrs;
  for (std::size_t b = 0; b < batches; ++b) {
    ptrs.clear();
    for (std::size_t i = b * n / batches; i < (b + 1) * n / batches; ++i) ptrs.push_back(&clips[i]);
    const BatchStats s = model.loss_and_grad(ptrs, nullptr, mode, false, threads);
    total.loss += s.loss * static_cast<double>(s.count);
    total.correct += s.correct;
    total.count += s.count;
  }
  total.loss /= static_cast<double>(total.count);
  return total;
}

TrainResult train(std::span<const ClipInputs> train_set, const std::vector<std::string>& vocabulary,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate(cfg);
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& c : train_set) {
    if (c.identity < 0 || static_cast<std::size_t>(c.identity) >= vocabulary.size()) {
      throw std::invalid_argument("train: clip " + c.clip_id + " is a distractor or has an out-of-vocabulary label");
    }
  }
  ModelConfig mc = cfg.model;
  mc.num_classes = vocabulary.size();
  infer_input_dims(mc, train_set);

  TrainResult result{FusionModel(mc, vocabulary, cfg.seed, train_set), {}};
  FusionModel& model = result.model;
  TrainReport& report = result.report;
  report.initial_loss = mean_loss(model, train_set, cfg.batch_size, Mode::kTrain, cfg.threads).loss;

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  const bool gamma_trainable = mc.use_mma && mc.gamma_trainable;

  FusionParams grads = model.params().zeros_like();
  FusionParams velocity = model.params().zeros_like();
  auto weights = model.params().tensors(gamma_trainable);
  auto grad_t = grads.tensors(gamma_trainable);
  auto vel_t = velocity.tensors(gamma_trainable);

  Rng shuffle_rng(derive_seed(cfg.seed, std::string_view("shuffle")));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<const ClipInputs*> batch;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      batch.clear();
      for (std::size_t i = b * n / batches; i < (b + 1) * n / batches; ++i) batch.push_back(&train_set[order[i]]);
      lr = cosine_rate(cfg.learning_rate, step, total_steps);
      grads.set_zero();
      const BatchStats s = model.loss_and_grad(batch, &grads, Mode::kTrain, true, cfg.threads);
      if (!std::isfinite(s.loss)) {
        throw TrainingError("training diverged: non-finite loss at step " + std::to_string(step));
      }
      for (std::size_t t = 0; t < weights.size(); ++t) {
        auto w = weights[t].values;
        auto g = grad_t[t].values;
        auto v = vel_t[t].values;
        const double wd = weights[t].decay ? cfg.weight_decay : 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = cfg.momentum * v[k] + g[k] + wd * w[k];
          w[k] -= lr * v[k];
        }
      }
      epoch_loss += s.loss * static_cast<double>(s.count);
      epoch_correct += s.correct;
      ++step;
    }
    EpochLog log{epoch, step, epoch_loss / static_cast<double>(n),
                 static_cast<double>(epoch_correct) / static_cast<double>(n), lr};
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  report.steps = step;
  const BatchStats final_stats = mean_loss(model, train_set, cfg.batch_size, Mode::kInfer, cfg.threads);
  if (!std::isfinite(final_stats.loss)) {
    throw TrainingError("training diverged: non-finite loss after step " + std::to_string(step));
  }
  report.final_loss = final_stats.loss;
  report.final_accuracy = static_cast<double>(final_stats.correct) / static_cast<double>(final_stats.count);
  return result;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const auto clips = dataset.select(dataset.split.train);
  const auto inputs = prepare_inputs(clips, cfg.model, cfg.threads);
  return train(inputs, dataset.split.vocabulary, cfg, on_epoch);
}

}  // namespace mmpid
