#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "mmpid/dataset.hpp"

namespace mmpid {

struct ModalityGenConfig {
  std::size_t dim = 64;
  // Expected L2 norm of the Gaussian noise added to each frame before
  // renormalization.
  double noise = 1.0;
};

// Synthetic benchmark knobs. Defaults are the "corrupted-modality" desk-scale
// benchmark: 50 identities, about 100 clips each, 4.72 s mean duration.
struct GenConfig {
  std::size_t num_identities = 50;
  std::size_t clips_min = 20;
  std::size_t clips_max = 250;
  // Target mean before clamping to [clips_min, clips_max].
  double clips_mean = 100.0;

  // Log-normal clip duration, rejection-sampled into [1, 30] s.
  double duration_mean_s = 4.72;
  double duration_log_sigma = 0.6;
  double frames_per_second = 4.0;

  // Indexed by Modality: face, head, body, audio.
  std::array<ModalityGenConfig, kModalityCount> modalities = {{
      {64, 0.8},  // face
      {64, 2.6},  // head
      {64, 8.0},  // body
      {64, 2.8},  // audio
  }};
  // Log-normal spread of the per-frame noise scale; drives quality ranking.
  double frame_noise_spread = 0.5;
  // Fraction of the noise variance shared by all frames of one clip stream
  // (pose, lighting, clothing). Shared noise does not average out over frames,
  // so the per-modality noise levels stay comparable with the single audio
  // embedding.
  double clip_noise_share = 0.9;

  double p_face_invisible = 0.2;
  double p_audio_wrong_speaker = 0.5;
  double p_modality_missing = 0.05;
  // Per-frame probability that a visible face frame is a misdetection drawn
  // from a shared clutter distribution instead of the person.
  double p_face_frame_clutter = 0.0;

  // Fraction of all clips whose identity lies outside the vocabulary.
  double distractor_fraction = 0.1;
  // Size of the pool of distractor identities (0 = num_identities).
  std::size_t distractor_identities = 0;

  std::uint64_t seed = 2019;
};

// Throws std::invalid_argument for infeasible configurations.
void validate(const GenConfig& cfg);

GenConfig gen_config_from_json(const std::string& text);
std::string gen_config_to_json(const GenConfig& cfg);

Dataset generate_benchmark(const GenConfig& cfg);

}  // namespace mmpid
