#include "mmpid/aggregate.hpp"

#include <stdexcept>

namespace mmpid {

ClipFeature average_pool(const SelectedFrames& frames) {
  if (frames.frames.empty()) throw std::invalid_argument("average_pool: no frames");
  const std::size_t dim = frames.frames.front().vector.size();
  ClipFeature out{frames.modality, std::vector<double>(dim, 0.0)};
  for (const auto& f : frames.frames)
    for (std::size_t i = 0; i < dim; ++i) out.vector[i] += f.vector[i];
  const double inv = 1.0 / static_cast<double>(frames.frames.size());
  for (double& v : out.vector) v *= inv;
  return out;
}

ClipFeature quality_weighted_pool(const SelectedFrames& frames) {
  if (frames.frames.empty()) throw std::invalid_argument("quality_weighted_pool: no frames");
  double total = 0.0;
  for (const auto& f : frames.frames) total += f.quality;
  if (!(total > 0.0)) return average_pool(frames);
  const std::size_t dim = frames.frames.front().vector.size();
  ClipFeature out{frames.modality, std::vector<double>(dim, 0.0)};
  for (const auto& f : frames.frames) {
    const double w = f.quality / total;
    for (std::size_t i = 0; i < dim; ++i) out.vector[i] += w * f.vector[i];
  }
  return out;
}

Matrix frames_matrix(const SelectedFrames& frames) {
  if (frames.frames.empty()) return {};
  const std::size_t dim = frames.frames.front().vector.size();
  Matrix m(frames.frames.size(), dim);
  for (std::size_t t = 0; t < frames.frames.size(); ++t)
    for (std::size_t i = 0; i < dim; ++i) m(t, i) = frames.frames[t].vector[i];
  return m;
}

}  // namespace mmpid
