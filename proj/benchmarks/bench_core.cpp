#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "mmpid/fusion.hpp"
#include "mmpid/model.hpp"
#include "mmpid/retrieval.hpp"
#include "mmpid/rng.hpp"
#include "mmpid/synthgen.hpp"
#include "mmpid/train.hpp"

namespace {

using namespace mmpid;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

void BM_MmaForward(benchmark::State& state) {
  Rng rng(1);
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rng, d, kSlotCount);
  const Matrix w = random_matrix(rng, 64, d);
  for (auto _ : state) benchmark::DoNotOptimize(mma_fuse(x, w, 0.05));
}
BENCHMARK(BM_MmaForward)->Arg(128)->Arg(512);

void BM_MmaBackward(benchmark::State& state) {
  Rng rng(2);
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rng, d, kSlotCount);
  const Matrix w = random_matrix(rng, 64, d);
  const Matrix up = random_matrix(rng, d, kSlotCount);
  MmaCache cache;
  mma_fuse(x, w, 0.05, &cache);
  Matrix d_x, d_w(64, d);
  double d_gamma = 0.0;
  for (auto _ : state) {
    mma_backward(cache, w, 0.05, up, d_x, d_w, d_gamma);
    benchmark::DoNotOptimize(d_x.data().data());
  }
}
BENCHMARK(BM_MmaBackward)->Arg(128)->Arg(512);

struct Fixture {
  Dataset ds;
  std::vector<ClipInputs> inputs;
  FusionModel model;

  Fixture() {
    GenConfig g;
    g.num_identities = 10;
    g.clips_min = g.clips_max = 20;
    g.clips_mean = 20;
    ds = generate_benchmark(g);
    std::vector<const ClipRecord*> clips;
    for (const auto& c : ds.clips)
      if (!c.is_distractor()) clips.push_back(&c);
    ModelConfig mc;
    mc.num_classes = ds.split.vocabulary.size();
    inputs = prepare_inputs(clips, mc, 1);
    infer_input_dims(mc, inputs);
    model = FusionModel(mc, ds.split.vocabulary, 1, inputs);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_PrepareInputs(benchmark::State& state) {
  auto& f = fixture();
  std::vector<const ClipRecord*> clips;
  for (std::size_t i = 0; i < 32; ++i) clips.push_back(&f.ds.clips[i]);
  for (auto _ : state) benchmark::DoNotOptimize(prepare_inputs(clips, f.model.config(), 1));
}
BENCHMARK(BM_PrepareInputs);

void BM_TrainStep(benchmark::State& state) {
  auto& f = fixture();
  std::vector<const ClipInputs*> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(&f.inputs[i]);
  FusionParams grads = f.model.params().zeros_like();
  for (auto _ : state) benchmark::DoNotOptimize(f.model.loss_and_grad(batch, &grads, Mode::kTrain, false, 1));
}
BENCHMARK(BM_TrainStep);

void BM_Retrieval(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < 50; ++i) vocab.push_back("id" + std::to_string(i));
  std::vector<ScoredClip> clips(n);
  for (std::size_t i = 0; i < n; ++i) {
    clips[i].clip_id = "c" + std::to_string(i);
    clips[i].identity = static_cast<int>(i % 50);
    for (std::size_t id = 0; id < 50; ++id) clips[i].scores.push_back(rng.uniform());
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_retrieval(clips, vocab, kRetrievalDepth, 1).map);
}
BENCHMARK(BM_Retrieval)->Arg(1000)->Arg(5000);

}  // namespace

BENCHMARK_MAIN();
