#include "mmpid/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

using nlohmann::json;

namespace {

// Seed streams; fixed so datasets stay byte-identical across versions.
constexpr std::uint64_t kStreamPrototypes = 1;
constexpr std::uint64_t kStreamDistractorPrototypes = 2;
constexpr std::uint64_t kStreamCounts = 3;
constexpr std::uint64_t kStreamClips = 4;
constexpr std::uint64_t kStreamSplit = 5;
constexpr std::uint64_t kStreamClutter = 6;

using Vec = std::vector<double>;
using Prototypes = std::array<Vec, kModalityCount>;

Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

Prototypes draw_prototypes(const GenConfig& cfg, Rng rng) {
  Prototypes p;
  for (Modality m : kAllModalities) p[index_of(m)] = random_unit(rng, cfg.modalities[index_of(m)].dim);
  return p;
}

// Standard normal vector scaled so its expected squared norm is 1.
Vec gaussian_direction(Rng& rng, std::size_t dim) {
  Vec v(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// `shared` is the clip-level noise direction; `share` of the noise variance
// comes from it and the rest is drawn fresh for this frame.
FrameEmbedding noisy_frame(Rng& rng, const Vec& center, const Vec& shared, double noise, double spread,
                           double share) {
  const std::size_t dim = center.size();
  const double scale = noise * std::exp(spread * rng.normal());
  const double a = std::sqrt(share);
  const double b = std::sqrt(1.0 - share) / std::sqrt(static_cast<double>(dim));
  Vec v(center);
  double noise2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double g = scale * (a * shared[i] + b * rng.normal());
    noise2 += g * g;
    v[i] += g;
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
  FrameEmbedding f;
  f.vector.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) f.vector[i] = static_cast<float>(v[i] * inv);
  const double noise_norm = std::sqrt(noise2);
  f.quality = static_cast<float>(noise_norm > 0.0 ? std::min(1.0 / noise_norm, 1e6) : 1e6);
  return f;
}

double draw_duration(const GenConfig& cfg, Rng& rng) {
  const double sigma = cfg.duration_log_sigma;
  const double mu = std::log(cfg.duration_mean_s) - 0.5 * sigma * sigma;
  for (;;) {
    const double d = std::exp(mu + sigma * rng.normal());
    if (d >= kMinClipSeconds && d <= kMaxClipSeconds) return d;
  }
}

std::size_t draw_count(const GenConfig& cfg, Rng& rng) {
  if (cfg.clips_min == cfg.clips_max) return cfg.clips_min;
  const double excess = std::max(0.0, cfg.clips_mean - static_cast<double>(cfg.clips_min));
  const double draw = static_cast<double>(cfg.clips_min) - excess * std::log1p(-rng.uniform());
  const auto n = static_cast<std::size_t>(std::llround(draw));
  return std::clamp(n, cfg.clips_min, cfg.clips_max);
}

std::string clip_name(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, index);
  return buf;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

struct ClipPlan {
  int identity;           // vocabulary label or kDistractor
  std::size_t source;     // index into identity or distractor prototypes
};

}  // namespace

void validate(const GenConfig& cfg) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
  };
  if (cfg.num_identities < 2) throw std::invalid_argument("num_identities must be at least 2");
  if (cfg.clips_min < 1) throw std::invalid_argument("clips_min must be at least 1");
  if (cfg.clips_max < cfg.clips_min) throw std::invalid_argument("clips_max is smaller than clips_min");
  if (!(cfg.duration_mean_s >= kMinClipSeconds && cfg.duration_mean_s <= kMaxClipSeconds)) {
    throw std::invalid_argument("duration_mean_s must lie in [1, 30]");
  }
  if (!(cfg.duration_log_sigma > 0.0)) throw std::invalid_argument("duration_log_sigma must be positive");
  if (!(cfg.frames_per_second > 0.0)) throw std::invalid_argument("frames_per_second must be positive");
  if (!(cfg.frame_noise_spread >= 0.0)) throw std::invalid_argument("frame_noise_spread must be non-negative");
  for (Modality m : kAllModalities) {
    const auto& mc = cfg.modalities[index_of(m)];
    if (mc.dim == 0) throw std::invalid_argument(std::string(modality_name(m)) + " dim must be positive");
    if (!(mc.noise > 0.0) || !std::isfinite(mc.noise)) {
      throw std::invalid_argument(std::string(modality_name(m)) + " noise must be positive");
    }
  }
  prob(cfg.clip_noise_share, "clip_noise_share");
  prob(cfg.p_face_invisible, "p_face_invisible");
  prob(cfg.p_audio_wrong_speaker, "p_audio_wrong_speaker");
  prob(cfg.p_modality_missing, "p_modality_missing");
  prob(cfg.p_face_frame_clutter, "p_face_frame_clutter");
  if (!(cfg.distractor_fraction >= 0.0 && cfg.distractor_fraction < 1.0)) {
    throw std::invalid_argument("distractor_fraction must lie in [0, 1)");
  }
}

GenConfig gen_config_from_json(const std::string& text) {
  GenConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("generator config: ") + e.what());
  }
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    take("num_identities", cfg.num_identities);
    take("clips_min", cfg.clips_min);
    take("clips_max", cfg.clips_max);
    take("clips_mean", cfg.clips_mean);
    take("duration_mean_s", cfg.duration_mean_s);
    take("duration_log_sigma", cfg.duration_log_sigma);
    take("frames_per_second", cfg.frames_per_second);
    take("frame_noise_spread", cfg.frame_noise_spread);
    take("clip_noise_share", cfg.clip_noise_share);
    take("p_face_invisible", cfg.p_face_invisible);
    take("p_audio_wrong_speaker", cfg.p_audio_wrong_speaker);
    take("p_modality_missing", cfg.p_modality_missing);
    take("p_face_frame_clutter", cfg.p_face_frame_clutter);
    take("distractor_fraction", cfg.distractor_fraction);
    take("distractor_identities", cfg.distractor_identities);
    take("seed", cfg.seed);
    if (j.contains("clips_per_identity")) {
      const auto n = j.at("clips_per_identity").get<std::size_t>();
      cfg.clips_min = cfg.clips_max = n;
      cfg.clips_mean = static_cast<double>(n);
    }
    if (j.contains("modalities")) {
      for (const auto& [name, mj] : j.at("modalities").items()) {
        auto& mc = cfg.modalities[index_of(modality_from_name(name))];
        if (mj.contains("dim")) mc.dim = mj.at("dim").get<std::size_t>();
        if (mj.contains("noise")) mc.noise = mj.at("noise").get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("generator config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::string gen_config_to_json(const GenConfig& cfg) {
  json mods = json::object();
  for (Modality m : kAllModalities) {
    const auto& mc = cfg.modalities[index_of(m)];
    mods[std::string(modality_name(m))] = {{"dim", mc.dim}, {"noise", mc.noise}};
  }
  json j = {{"num_identities", cfg.num_identities},
            {"clips_min", cfg.clips_min},
            {"clips_max", cfg.clips_max},
            {"clips_mean", cfg.clips_mean},
            {"duration_mean_s", cfg.duration_mean_s},
            {"duration_log_sigma", cfg.duration_log_sigma},
            {"frames_per_second", cfg.frames_per_second},
            {"frame_noise_spread", cfg.frame_noise_spread},
            {"clip_noise_share", cfg.clip_noise_share},
            {"modalities", mods},
            {"p_face_invisible", cfg.p_face_invisible},
            {"p_audio_wrong_speaker", cfg.p_audio_wrong_speaker},
            {"p_modality_missing", cfg.p_modality_missing},
            {"p_face_frame_clutter", cfg.p_face_frame_clutter},
            {"distractor_fraction", cfg.distractor_fraction},
            {"distractor_identities", cfg.distractor_identities},
            {"seed", cfg.seed}};
  return j.dump(2);
}

Dataset generate_benchmark(const GenConfig& cfg) {
  validate(cfg);
  const std::size_t n_ids = cfg.num_identities;
  const std::size_t n_distractor_ids = cfg.distractor_identities == 0 ? n_ids : cfg.distractor_identities;

  std::vector<Prototypes> protos(n_ids);
  for (std::size_t i = 0; i < n_ids; ++i) {
    protos[i] = draw_prototypes(cfg, Rng(derive_seed(derive_seed(cfg.seed, kStreamPrototypes), i)));
  }
  std::vector<Prototypes> distractor_protos(n_distractor_ids);
  for (std::size_t i = 0; i < n_distractor_ids; ++i) {
    distractor_protos[i] =
        draw_prototypes(cfg, Rng(derive_seed(derive_seed(cfg.seed, kStreamDistractorPrototypes), i)));
  }
  Rng clutter_rng(derive_seed(cfg.seed, kStreamClutter));
  const Vec clutter_center = random_unit(clutter_rng, cfg.modalities[index_of(Modality::kFace)].dim);

  Rng count_rng(derive_seed(cfg.seed, kStreamCounts));
  std::vector<ClipPlan> plan;
  std::vector<std::vector<std::size_t>> clips_of(n_ids);
  for (std::size_t i = 0; i < n_ids; ++i) {
    const std::size_t n = draw_count(cfg, count_rng);
    for (std::size_t c = 0; c < n; ++c) {
      clips_of[i].push_back(plan.size());
      plan.push_back({static_cast<int>(i), i});
    }
  }
  const std::size_t identity_clips = plan.size();
  const auto n_distractors = static_cast<std::size_t>(std::llround(
      cfg.distractor_fraction * static_cast<double>(identity_clips) / (1.0 - cfg.distractor_fraction)));
  std::vector<std::size_t> distractor_clips;
  for (std::size_t d = 0; d < n_distractors; ++d) {
    distractor_clips.push_back(plan.size());
    plan.push_back({kDistractor, count_rng.uniform_index(n_distractor_ids)});
  }

  Dataset ds;
  ds.clips.resize(plan.size());
  for (std::size_t ci = 0; ci < plan.size(); ++ci) {
    const ClipPlan& p = plan[ci];
    Rng rng(derive_seed(derive_seed(cfg.seed, kStreamClips), ci));
    ClipRecord& clip = ds.clips[ci];
    clip.clip_id = clip_name(p.identity == kDistractor ? "d" : "c", ci);
    clip.identity = p.identity;
    clip.duration_s = draw_duration(cfg, rng);
    const Prototypes& own = p.identity == kDistractor ? distractor_protos[p.source] : protos[p.source];
    const auto frames = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(clip.duration_s * cfg.frames_per_second)));

    // Clip-level corruption draws happen in a fixed order regardless of outcome.
    std::array<bool, kModalityCount> missing{};
    for (Modality m : kAllModalities) missing[index_of(m)] = rng.bernoulli(cfg.p_modality_missing);
    const bool face_invisible = rng.bernoulli(cfg.p_face_invisible);
    const bool wrong_speaker = rng.bernoulli(cfg.p_audio_wrong_speaker);
    const Vec invisible_dir = random_unit(rng, cfg.modalities[index_of(Modality::kFace)].dim);
    std::size_t other = rng.uniform_index(n_ids);
    if (p.identity != kDistractor && other == p.source) other = (other + 1) % n_ids;

    const Vec* face_center = face_invisible ? &invisible_dir : &own[index_of(Modality::kFace)];
    for (Modality m : {Modality::kFace, Modality::kHead, Modality::kBody}) {
      if (missing[index_of(m)]) continue;
      const auto& mc = cfg.modalities[index_of(m)];
      const Vec& center = m == Modality::kFace ? *face_center : own[index_of(m)];
      const Vec shared = gaussian_direction(rng, mc.dim);
      auto& stream = clip.stream(m);
      stream.reserve(frames);
      for (std::size_t t = 0; t < frames; ++t) {
        const bool clutter = m == Modality::kFace && rng.bernoulli(cfg.p_face_frame_clutter);
        stream.push_back(noisy_frame(rng, clutter ? clutter_center : center, shared, mc.noise,
                                     cfg.frame_noise_spread, cfg.clip_noise_share));
      }
    }
    if (!missing[index_of(Modality::kAudio)]) {
      const auto& mc = cfg.modalities[index_of(Modality::kAudio)];
      const Vec& voice = wrong_speaker ? protos[other][index_of(Modality::kAudio)] : own[index_of(Modality::kAudio)];
      const Vec shared = gaussian_direction(rng, mc.dim);
      clip.stream(Modality::kAudio)
          .push_back(noisy_frame(rng, voice, shared, mc.noise, cfg.frame_noise_spread, cfg.clip_noise_share));
    }
  }

  // 40/30/30 per identity; distractors split evenly between val and test.
  Rng split_rng(derive_seed(cfg.seed, kStreamSplit));
  for (std::size_t i = 0; i < n_ids; ++i) {
    auto idx = clips_of[i];
    shuffle(idx, split_rng);
    const std::size_t n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.4 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(n))));
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
              idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    for (std::size_t k = 0; k < n; ++k) {
      auto& list = k < n_train ? ds.split.train : (k < n_train + n_val ? ds.split.val : ds.split.test);
      list.push_back(ds.clips[idx[k]].clip_id);
    }
  }
  shuffle(distractor_clips, split_rng);
  const std::size_t half = distractor_clips.size() / 2;
  std::sort(distractor_clips.begin(), distractor_clips.begin() + static_cast<std::ptrdiff_t>(half));
  std::sort(distractor_clips.begin() + static_cast<std::ptrdiff_t>(half), distractor_clips.end());
  for (std::size_t k = 0; k < distractor_clips.size(); ++k) {
    (k < half ? ds.split.val : ds.split.test).push_back(ds.clips[distractor_clips[k]].clip_id);
  }

  ds.split.vocabulary.reserve(n_ids);
  for (std::size_t i = 0; i < n_ids; ++i) ds.split.vocabulary.push_back(clip_name("person_", i));
  return ds;
}

}  // namespace mmpid
