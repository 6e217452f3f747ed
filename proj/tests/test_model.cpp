#include <cmath>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mmpid/checkpoint.hpp"
#include "mmpid/model.hpp"
#include "mmpid/numerics.hpp"
#include "mmpid/synthgen.hpp"
#include "mmpid/train.hpp"
#include "test_util.hpp"

using namespace mmpid;
using mmpid::testing::make_clip;
using mmpid::testing::TempDir;

namespace {

const std::vector<std::string> kVocab3 = {"a", "b", "c"};

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.feature_dim = 8;
  mc.attention_dim = 4;
  mc.netvlad_clusters = 2;
  mc.frames_per_clip = 3;
  mc.num_classes = 3;
  mc.input_dims = {5, 5, 5, 5, 5, 5};
  return mc;
}

std::vector<ClipInputs> tiny_inputs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ClipInputs> out;
  for (std::size_t i = 0; i < n; ++i) {
    const ClipRecord c = make_clip("t" + std::to_string(i), static_cast<int>(i % 3), rng, 4, 5);
    out.push_back(prepare_inputs(c, 3, 7));
  }
  return out;
}

std::vector<const ClipInputs*> pointers(const std::vector<ClipInputs>& v) {
  std::vector<const ClipInputs*> p;
  for (const auto& c : v) p.push_back(&c);
  return p;
}

// Largest relative error over every trainable tensor of the model.
double end_to_end_gradient_error(FusionModel& model, const std::vector<ClipInputs>& inputs, Mode mode) {
  const auto batch = pointers(inputs);
  FusionParams grads = model.params().zeros_like();
  model.loss_and_grad(batch, &grads, mode, false, 1);
  auto weights = model.params().tensors(true);
  auto grad_t = grads.tensors(true);
  REQUIRE(weights.size() == grad_t.size());
  double worst = 0.0;
  for (std::size_t t = 0; t < weights.size(); ++t) {
    CAPTURE(weights[t].name);
    const std::vector<double> x0(weights[t].values.begin(), weights[t].values.end());
    auto f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), weights[t].values.begin());
      const double v = model.loss_and_grad(batch, nullptr, mode, false, 1).loss;
      std::copy(x0.begin(), x0.end(), weights[t].values.begin());
      return v;
    };
    const auto r = grad_check(f, x0, grad_t[t].values);
    CHECK(r.max_rel_error < 1e-5);
    worst = std::max(worst, r.max_rel_error);
  }
  return worst;
}

GenConfig toy_benchmark() {
  GenConfig g;
  g.num_identities = 4;
  g.clips_min = g.clips_max = 30;
  g.clips_mean = 30;
  for (auto& m : g.modalities) {
    m.dim = 8;
    m.noise = 0.5;
  }
  g.p_face_invisible = 0.0;
  g.p_audio_wrong_speaker = 0.0;
  return g;
}

TrainConfig toy_train(std::size_t threads) {
  TrainConfig tc;
  tc.model.feature_dim = 16;
  tc.model.attention_dim = 4;
  tc.model.netvlad_clusters = 2;
  tc.model.frames_per_clip = 4;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.threads = threads;
  return tc;
}

std::vector<double> flat_state(FusionModel& m) {
  std::vector<double> v;
  for (const auto& t : m.state()) v.insert(v.end(), t.values.begin(), t.values.end());
  return v;
}

}  // namespace

TEST_CASE("prepare_inputs pools each modality and marks presence") {
  Rng rng(1);
  ClipRecord c = make_clip("p0", 1, rng, 6, 5);
  c.stream(Modality::kBody).clear();
  c.stream(Modality::kAudio).push_back(c.stream(Modality::kAudio)[0]);
  c.stream(Modality::kAudio)[1].vector[0] += 2.0f;
  const ClipInputs in = prepare_inputs(c, 4, 7);
  CHECK(in.face_frames.rows() == 4);
  CHECK(in.face_frames.cols() == 5);
  CHECK(in.present[static_cast<std::size_t>(Slot::kFaceVlad)]);
  CHECK(in.present[static_cast<std::size_t>(Slot::kHead)]);
  CHECK_FALSE(in.present[static_cast<std::size_t>(Slot::kBody)]);
  const auto& audio = in.pooled[static_cast<std::size_t>(Slot::kAudio)];
  CHECK(audio[0] == doctest::Approx(double(c.stream(Modality::kAudio)[0].vector[0]) + 1.0));
  // Same seed and clip id give the same resampling.
  const ClipInputs again = prepare_inputs(c, 40, 7);
  CHECK(again.face_frames == prepare_inputs(c, 40, 7).face_frames);
}

TEST_CASE("end-to-end gradients match finite differences (D=8, D'=4, M=6, C=3, K_c=2)") {
  const auto inputs = tiny_inputs(5, 11);
  ModelConfig mc = tiny_config();
  mc.gamma_trainable = true;
  FusionModel model(mc, kVocab3, 3, inputs);
  CHECK(end_to_end_gradient_error(model, inputs, Mode::kTrain) < 1e-5);
}

TEST_CASE("end-to-end gradients with a hidden layer and a larger gamma") {
  const auto inputs = tiny_inputs(4, 12);
  ModelConfig mc = tiny_config();
  mc.gamma = 0.4;
  mc.hidden_units = 6;
  FusionModel model(mc, kVocab3, 4, inputs);
  end_to_end_gradient_error(model, inputs, Mode::kTrain);
}

TEST_CASE("end-to-end gradients without NetVLAD or MMA and with absent slots") {
  auto inputs = tiny_inputs(4, 13);
  inputs[1].present[static_cast<std::size_t>(Slot::kHead)] = false;
  inputs[2].present[static_cast<std::size_t>(Slot::kAudio)] = false;
  ModelConfig mc = tiny_config();
  mc.slots[0] = false;
  mc.use_mma = false;
  FusionModel model(mc, kVocab3, 5, inputs);
  end_to_end_gradient_error(model, inputs, Mode::kTrain);
}

TEST_CASE("inference-mode gradients use the running statistics") {
  const auto inputs = tiny_inputs(4, 14);
  FusionModel model(tiny_config(), kVocab3, 6, inputs);
  model.loss_and_grad(pointers(inputs), nullptr, Mode::kTrain, true, 1);
  CHECK(model.netvlad_batches_seen() == 1);
  end_to_end_gradient_error(model, inputs, Mode::kInfer);
}

TEST_CASE("predict returns distributions and rejects inference before training when NetVLAD is on") {
  const auto inputs = tiny_inputs(3, 15);
  FusionModel model(tiny_config(), kVocab3, 7, inputs);
  CHECK_THROWS_AS(model.predict(inputs, 1), std::logic_error);
  model.loss_and_grad(pointers(inputs), nullptr, Mode::kTrain, true, 1);
  for (const auto& p : model.predict(inputs, 1)) {
    double s = 0.0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Matrix y = model.average_attention(inputs, 1);
  for (std::size_t j = 0; j < kSlotCount; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < kSlotCount; ++i) s += y(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("map_features names the slot with the wrong dimension") {
  const auto inputs = tiny_inputs(1, 16);
  FusionModel model(tiny_config(), kVocab3, 8, inputs);
  std::array<std::span<const double>, kSlotCount> feats{};
  const std::vector<double> wrong(7, 0.0);
  feats[static_cast<std::size_t>(Slot::kBody)] = wrong;
  CHECK_THROWS_WITH_AS(model.map_features(feats), doctest::Contains("body"), std::invalid_argument);
}

TEST_CASE("model construction validates its configuration") {
  ModelConfig mc = tiny_config();
  CHECK_THROWS_AS(FusionModel(mc, {"only"}, 1), std::invalid_argument);
  mc.input_dims[3] = 0;
  CHECK_THROWS_WITH_AS(FusionModel(mc, kVocab3, 1), doctest::Contains("head"), std::invalid_argument);
}

TEST_CASE("training lowers the loss and fits a clean toy benchmark") {
  const Dataset ds = generate_benchmark(toy_benchmark());
  const TrainResult r = train(ds, toy_train(1));
  CHECK(r.report.final_loss < r.report.initial_loss);
  CHECK(r.report.final_accuracy > 0.9);
  CHECK(r.report.epochs.size() == 4);
  CHECK(r.report.steps == r.report.epochs.back().step);
  for (const auto& e : r.report.epochs) CHECK(std::isfinite(e.loss));
}

TEST_CASE("10 clips of 2 identities are fit perfectly after 200 epochs") {
  GenConfig g = toy_benchmark();
  g.num_identities = 2;
  g.clips_min = g.clips_max = 13;
  g.clips_mean = 13;
  g.distractor_fraction = 0.0;
  for (auto& m : g.modalities) m.noise = 2.0;
  Dataset ds = generate_benchmark(g);
  // Keep exactly 10 training clips.
  ds.split.train.resize(10);
  REQUIRE(ds.split.train.size() == 10);
  TrainConfig tc = toy_train(1);
  tc.epochs = 200;
  tc.batch_size = 4;
  const TrainResult r = train(ds, tc);
  CHECK(r.report.final_accuracy == 1.0);
}

TEST_CASE("one epoch on the default benchmark lowers the loss below its initial value") {
  const Dataset ds = generate_benchmark(GenConfig{});
  TrainConfig tc;
  tc.epochs = 1;
  const TrainResult r = train(ds, tc);
  REQUIRE(r.report.epochs.size() == 1);
  CHECK(r.report.final_loss < r.report.initial_loss);
}

TEST_CASE("training is bit-identical across thread counts") {
  const Dataset ds = generate_benchmark(toy_benchmark());
  TrainResult a = train(ds, toy_train(1));
  TrainResult b = train(ds, toy_train(3));
  CHECK(flat_state(a.model) == flat_state(b.model));
}

TEST_CASE("weight decay leaves gamma, biases and batch-norm parameters alone") {
  FusionModel model(tiny_config(), kVocab3, 9, tiny_inputs(2, 17));
  for (const auto& t : model.params().tensors(true)) {
    CAPTURE(t.name);
    const std::string name(t.name);
    const bool expect = name.ends_with(".w") || name == "mma.w_f" || name == "netvlad.assign_w" ||
                        name == "netvlad.post_w";
    CHECK(t.decay == expect);
  }
}

TEST_CASE("train config JSON round trip rejects unknown keys") {
  TrainConfig tc = toy_train(2);
  tc.model.slots[4] = false;
  tc.model.use_mma = false;
  const TrainConfig back = train_config_from_json(train_config_to_json(tc));
  CHECK(back.epochs == tc.epochs);
  CHECK(back.model == tc.model);
  CHECK_THROWS_WITH_AS(train_config_from_json(R"({"epoch": 3})"), doctest::Contains("epoch"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(R"({"model": {"slots": ["smell"]}})"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(R"({"batch_size": 0})"), std::invalid_argument);
}

TEST_CASE("checkpoints round trip bit for bit") {
  const Dataset ds = generate_benchmark(toy_benchmark());
  TrainResult r = train(ds, toy_train(1));
  TempDir dir("ckpt");
  const auto path = dir.path() / "model.ckpt";
  save_checkpoint(r.model, path, r.report);
  CHECK(std::filesystem::exists(sidecar_path(path)));
  FusionModel loaded = load_checkpoint(path);
  CHECK(loaded.config() == r.model.config());
  CHECK(loaded.vocabulary() == r.model.vocabulary());
  CHECK(flat_state(loaded) == flat_state(r.model));
  const auto test = ds.select(ds.split.test);
  const std::vector<FusionModel> a = {r.model}, b = {loaded};
  CHECK(ensemble_predict(a, test, 1) == ensemble_predict(b, test, 1));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Dataset ds = generate_benchmark(toy_benchmark());
  TrainResult r = train(ds, toy_train(1));
  TempDir dir("ckpt_bad");
  const auto path = dir.path() / "m.ckpt";
  save_checkpoint(r.model, path);
  const auto size = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, size - 8);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), CheckpointError);

  save_checkpoint(r.model, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), CheckpointError);

  save_checkpoint(r.model, path);
  {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.write("\0", 1);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"), CheckpointError);

  std::filesystem::remove(sidecar_path(path));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("ensemble scores are the sum of member probabilities") {
  const Dataset ds = generate_benchmark(toy_benchmark());
  TrainConfig tc = toy_train(1);
  TrainResult r1 = train(ds, tc);
  tc.seed = 2;
  TrainResult r2 = train(ds, tc);
  const auto test = ds.select(ds.split.test);
  const std::vector<FusionModel> one = {r1.model}, two = {r2.model}, both = {r1.model, r2.model};
  const auto p1 = ensemble_predict(one, test, 1);
  const auto p2 = ensemble_predict(two, test, 1);
  const auto pe = ensemble_predict(both, test, 1);
  for (std::size_t i = 0; i < test.size(); ++i)
    for (std::size_t c = 0; c < p1[i].size(); ++c) CHECK(pe[i][c] == p1[i][c] + p2[i][c]);
  CHECK(ensemble_predict(both, *test[0]) == pe[0]);

  // Duplicating the whole model list leaves every argmax unchanged.
  const std::vector<FusionModel> doubled = {r1.model, r2.model, r1.model, r2.model};
  const auto pd = ensemble_predict(doubled, test, 1);
  auto argmax = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(argmax(pd[i]) == argmax(pe[i]));

  FusionModel other(r1.model.config(), {"w", "x", "y", "z"}, 1);
  const std::vector<FusionModel> mixed = {r1.model, other};
  CHECK_THROWS_AS(ensemble_predict(mixed, test, 1), std::invalid_argument);
}

TEST_CASE("infer_input_dims disables slots no training clip carries") {
  auto inputs = tiny_inputs(3, 18);
  for (auto& c : inputs) {
    c.present[static_cast<std::size_t>(Slot::kBody)] = false;
    c.pooled[static_cast<std::size_t>(Slot::kBody)].clear();
  }
  ModelConfig mc;
  infer_input_dims(mc, inputs);
  CHECK(mc.input_dims[0] == 5);
  CHECK(mc.input_dims[static_cast<std::size_t>(Slot::kHead)] == 5);
  CHECK_FALSE(mc.slots[static_cast<std::size_t>(Slot::kBody)]);
}
