#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mmpid/dataset.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

inline constexpr std::size_t kDefaultFramesPerClip = 32;

struct SelectedFrames {
  Modality modality = Modality::kFace;
  std::vector<FrameEmbedding> frames;
  // Index of each selected frame in the input sequence; repeats when resampled.
  std::vector<std::size_t> source_indices;
};

// Keeps the k highest-quality frames (ties: smaller index first), ordered by
// descending quality. With fewer than k frames every original is kept once and
// the remainder is drawn uniformly with replacement from `rng`.
// Returns nullopt for an empty stream: the modality is absent.
std::optional<SelectedFrames> select_top_k(std::span<const FrameEmbedding> frames, std::size_t k,
                                           Rng& rng, Modality modality = Modality::kFace);

}  // namespace mmpid
