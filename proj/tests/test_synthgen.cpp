#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "mmpid/retrieval.hpp"
#include "mmpid/synthgen.hpp"
#include "test_util.hpp"

using namespace mmpid;
using mmpid::testing::TempDir;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.num_identities = 6;
  cfg.clips_min = cfg.clips_max = 20;
  cfg.clips_mean = 20;
  for (auto& m : cfg.modalities) m.dim = 8;
  return cfg;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s;
}

std::vector<float> mean_of(const std::vector<FrameEmbedding>& frames) {
  std::vector<float> m(frames.front().vector.size(), 0.0f);
  for (const auto& f : frames)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += f.vector[i] / static_cast<float>(frames.size());
  return m;
}

}  // namespace

TEST_CASE("generated clips satisfy every record invariant") {
  const GenConfig cfg = small_config();
  const Dataset ds = generate_benchmark(cfg);
  CHECK(ds.split.vocabulary.size() == 6);
  for (const auto& c : ds.clips) {
    CHECK_NOTHROW(validate_clip(c, ds.split.num_classes()));
    CHECK(c.duration_s >= 1.0);
    CHECK(c.duration_s <= 30.0);
    for (Modality m : kAllModalities) {
      for (const auto& f : c.stream(m)) {
        CHECK(f.vector.size() == 8);
        CHECK(f.quality >= 0.0f);
        double n2 = 0.0;
        for (float v : f.vector) n2 += double(v) * v;
        CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
    if (c.has(Modality::kAudio)) CHECK(c.stream(Modality::kAudio).size() == 1);
  }
  CHECK_NOTHROW(validate_split(ds.clips, ds.split));
}

TEST_CASE("split is 40/30/30 per identity with distractors only in val and test") {
  GenConfig cfg = small_config();
  cfg.distractor_fraction = 0.2;
  const Dataset ds = generate_benchmark(cfg);
  std::map<std::string, const ClipRecord*> by_id;
  for (const auto& c : ds.clips) by_id[c.clip_id] = &c;
  std::map<int, std::array<int, 3>> counts;
  int distractors_val = 0, distractors_test = 0;
  for (int s = 0; s < 3; ++s) {
    const auto& list = s == 0 ? ds.split.train : (s == 1 ? ds.split.val : ds.split.test);
    for (const auto& id : list) {
      const ClipRecord* c = by_id.at(id);
      if (c->is_distractor()) {
        REQUIRE(s != 0);
        (s == 1 ? distractors_val : distractors_test)++;
      } else {
        counts[c->identity][s]++;
      }
    }
  }
  for (const auto& [id, n] : counts) {
    CHECK(n[0] == 8);
    CHECK(n[1] == 6);
    CHECK(n[2] == 6);
  }
  // 120 identity clips at a 20% distractor share -> 30 distractors.
  CHECK(distractors_val + distractors_test == 30);
  CHECK(std::abs(distractors_val - distractors_test) <= 1);
}

TEST_CASE("10 identities with 20 clips each and no distractors give 200 clips split 80/60/60") {
  GenConfig cfg = small_config();
  cfg.num_identities = 10;
  cfg.distractor_fraction = 0.0;
  const Dataset ds = generate_benchmark(cfg);
  CHECK(ds.clips.size() == 200);
  CHECK(ds.split.train.size() == 80);
  CHECK(ds.split.val.size() == 60);
  CHECK(ds.split.test.size() == 60);
}

TEST_CASE("without corruption and with near-zero face noise, nearest-prototype face retrieval is perfect") {
  GenConfig cfg = small_config();
  cfg.num_identities = 8;
  cfg.p_face_invisible = 0.0;
  cfg.p_audio_wrong_speaker = 0.0;
  cfg.p_modality_missing = 0.0;
  cfg.modalities[index_of(Modality::kFace)].noise = 1e-6;
  const Dataset ds = generate_benchmark(cfg);
  std::map<std::string, const ClipRecord*> by_id;
  for (const auto& c : ds.clips) by_id[c.clip_id] = &c;
  // Prototype estimate: mean face frame over each identity's training clips.
  std::vector<std::vector<float>> proto(cfg.num_identities);
  for (const auto& id : ds.split.train) {
    const ClipRecord* c = by_id.at(id);
    if (proto[c->identity].empty()) proto[c->identity] = mean_of(c->stream(Modality::kFace));
  }
  std::vector<ScoredClip> scored;
  for (const auto& id : ds.split.test) {
    const ClipRecord* c = by_id.at(id);
    const auto m = mean_of(c->stream(Modality::kFace));
    ScoredClip s{c->clip_id, c->identity, {}};
    for (const auto& p : proto) s.scores.push_back(dot(m, p));
    scored.push_back(std::move(s));
  }
  CHECK(evaluate_retrieval(scored, ds.split.vocabulary, kRetrievalDepth, 1).map == doctest::Approx(1.0));
}

TEST_CASE("corrupted-face fraction concentrates around p_face_invisible") {
  GenConfig cfg;
  cfg.num_identities = 10;
  cfg.clips_min = cfg.clips_max = 100;
  cfg.clips_mean = 100;
  cfg.distractor_fraction = 0.0;
  cfg.p_modality_missing = 0.0;
  cfg.p_face_invisible = 0.3;
  cfg.modalities[index_of(Modality::kFace)].noise = 0.2;
  cfg.clip_noise_share = 0.0;
  for (auto& m : cfg.modalities) m.dim = 32;
  const Dataset ds = generate_benchmark(cfg);
  // A visible clip's face mean lies close to most clips of its identity; an
  // invisible clip's points in a random direction.
  std::vector<std::vector<float>> clip_means;
  for (const auto& c : ds.clips) clip_means.push_back(mean_of(c.stream(Modality::kFace)));
  std::size_t invisible = 0;
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    std::size_t close = 0;
    for (std::size_t j = 0; j < ds.clips.size(); ++j) {
      if (i == j || ds.clips[j].identity != ds.clips[i].identity) continue;
      if (dot(clip_means[i], clip_means[j]) > 0.5) ++close;
    }
    if (close < 20) ++invisible;
  }
  const double frac = static_cast<double>(invisible) / static_cast<double>(ds.clips.size());
  CHECK(frac > 0.27);
  CHECK(frac < 0.33);
}

TEST_CASE("wrong-speaker audio matches another identity's voice") {
  GenConfig cfg = small_config();
  cfg.p_audio_wrong_speaker = 1.0;
  cfg.p_modality_missing = 0.0;
  cfg.distractor_fraction = 0.0;
  cfg.modalities[index_of(Modality::kAudio)].noise = 0.05;
  cfg.modalities[index_of(Modality::kAudio)].dim = 32;
  const Dataset wrong = generate_benchmark(cfg);
  cfg.p_audio_wrong_speaker = 0.0;
  const Dataset right = generate_benchmark(cfg);
  // Build each identity's true voice from the clean run.
  std::map<int, std::vector<float>> voice;
  for (const auto& c : right.clips) voice.emplace(c.identity, c.stream(Modality::kAudio)[0].vector);
  for (const auto& c : wrong.clips) {
    const auto& a = c.stream(Modality::kAudio)[0].vector;
    CHECK(dot(a, voice.at(c.identity)) < 0.8);
    bool matches_other = false;
    for (const auto& [id, v] : voice) matches_other |= id != c.identity && dot(a, v) > 0.9;
    CHECK(matches_other);
  }
}

TEST_CASE("quality ranks frames by realized noise") {
  GenConfig cfg = small_config();
  cfg.p_face_invisible = 0.0;
  cfg.p_modality_missing = 0.0;
  cfg.clip_noise_share = 0.0;
  cfg.frame_noise_spread = 1.0;
  for (auto& m : cfg.modalities) m.dim = 64;
  const Dataset ds = generate_benchmark(cfg);
  // Within a clip, higher-quality frames sit closer to the clip's mean direction.
  std::size_t agree = 0, total = 0;
  for (const auto& c : ds.clips) {
    const auto& frames = c.stream(Modality::kFace);
    if (frames.size() < 4) continue;
    const auto center = mean_of(frames);
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
      const bool q = frames[i].quality > frames[i + 1].quality;
      const bool d = dot(frames[i].vector, center) > dot(frames[i + 1].vector, center);
      agree += q == d;
      ++total;
    }
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(total) > 0.8);
}

TEST_CASE("generation is deterministic and seed dependent") {
  const GenConfig cfg = small_config();
  const Dataset a = generate_benchmark(cfg);
  const Dataset b = generate_benchmark(cfg);
  CHECK(a.clips == b.clips);
  CHECK(a.split == b.split);
  GenConfig other = cfg;
  other.seed += 1;
  CHECK_FALSE(generate_benchmark(other).clips == a.clips);
}

TEST_CASE("default config mirrors the desk-scale benchmark") {
  const GenConfig cfg;
  CHECK(cfg.num_identities == 50);
  CHECK(cfg.clips_mean == 100.0);
  CHECK(cfg.duration_mean_s == doctest::Approx(4.72));
  CHECK(cfg.p_face_invisible == 0.2);
  CHECK(cfg.p_audio_wrong_speaker == 0.5);
  const auto& m = cfg.modalities;
  CHECK(m[index_of(Modality::kFace)].noise < m[index_of(Modality::kHead)].noise);
  CHECK(m[index_of(Modality::kHead)].noise < m[index_of(Modality::kAudio)].noise);
  CHECK(m[index_of(Modality::kAudio)].noise < m[index_of(Modality::kBody)].noise);
}

TEST_CASE("mean clip duration tracks the configured mean") {
  GenConfig cfg;
  cfg.num_identities = 20;
  for (auto& m : cfg.modalities) m.dim = 4;
  const Dataset ds = generate_benchmark(cfg);
  double sum = 0.0;
  for (const auto& c : ds.clips) sum += c.duration_s;
  CHECK(sum / static_cast<double>(ds.clips.size()) == doctest::Approx(4.72).epsilon(0.05));
}

TEST_CASE("config JSON round trip and validation") {
  GenConfig cfg = small_config();
  cfg.p_face_invisible = 0.25;
  cfg.modalities[index_of(Modality::kBody)].noise = 9.0;
  const GenConfig back = gen_config_from_json(gen_config_to_json(cfg));
  CHECK(back.p_face_invisible == 0.25);
  CHECK(back.modalities[index_of(Modality::kBody)].noise == 9.0);
  CHECK(back.num_identities == 6);
  const GenConfig fixed = gen_config_from_json(R"({"clips_per_identity": 12})");
  CHECK(fixed.clips_min == 12);
  CHECK(fixed.clips_max == 12);
  CHECK_THROWS_AS(gen_config_from_json(R"({"p_face_invisible": 1.5})"), std::invalid_argument);
  CHECK_THROWS_AS(gen_config_from_json(R"({"num_identities": 1})"), std::invalid_argument);
  CHECK_THROWS_AS(gen_config_from_json("{oops"), std::invalid_argument);
}

TEST_CASE("generated dataset survives a disk round trip") {
  const Dataset ds = generate_benchmark(small_config());
  TempDir dir("synth_rt");
  write_dataset(ds.clips, ds.split, dir.path());
  const Dataset back = read_dataset(dir.path());
  CHECK(back.split == ds.split);
  CHECK(back.clips == ds.clips);
}
