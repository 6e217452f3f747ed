#pragma once

#include <span>
#include <vector>

#include "mmpid/frameselect.hpp"
#include "mmpid/matrix.hpp"

namespace mmpid {

struct ClipFeature {
  Modality modality = Modality::kFace;
  std::vector<double> vector;
};

// Arithmetic mean of the selected frame vectors.
ClipFeature average_pool(const SelectedFrames& frames);

// Mean weighted by per-frame quality. Falls back to the plain mean when every
// quality is zero.
ClipFeature quality_weighted_pool(const SelectedFrames& frames);

// K x d matrix of the selected frames, one row per frame.
Matrix frames_matrix(const SelectedFrames& frames);

}  // namespace mmpid
