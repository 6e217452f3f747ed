#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>

#include "mmpid/model.hpp"
#include "mmpid/train.hpp"

namespace mmpid {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary file:
//   8 bytes  magic "MMPIDCKP"
//   u32 LE   format version (1)
//   u32 LE   tensor count
//   u64 LE   total value count
//   f64 LE   values of every tensor, in FusionModel::state() order
// Sidecar `<path>.json` holds the model config, vocabulary, seed, tensor
// names/shapes and (optionally) the training report.
void save_checkpoint(FusionModel& model, const std::filesystem::path& path,
                     const std::optional<TrainReport>& report = std::nullopt);
FusionModel load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace mmpid
