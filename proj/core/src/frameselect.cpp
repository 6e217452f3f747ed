#include "mmpid/frameselect.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mmpid {

std::optional<SelectedFrames> select_top_k(std::span<const FrameEmbedding> frames, std::size_t k,
                                           Rng& rng, Modality modality) {
  if (k == 0) throw std::invalid_argument("select_top_k: k must be at least 1");
  if (frames.empty()) return std::nullopt;

  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return frames[a].quality > frames[b].quality;
  });

  SelectedFrames out;
  out.modality = modality;
  if (order.size() >= k) {
    order.resize(k);
  } else {
    const std::size_t n = order.size();
    while (order.size() < k) order.push_back(rng.uniform_index(n));
  }
  out.source_indices = std::move(order);
  out.frames.reserve(k);
  for (std::size_t i : out.source_indices) out.frames.push_back(frames[i]);
  return out;
}

}  // namespace mmpid
