#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmpid {

enum class Modality { kFace = 0, kHead = 1, kBody = 2, kAudio = 3 };
inline constexpr std::size_t kModalityCount = 4;
inline constexpr std::array<Modality, kModalityCount> kAllModalities = {
    Modality::kFace, Modality::kHead, Modality::kBody, Modality::kAudio};

std::string_view modality_name(Modality m);
// Throws std::invalid_argument for unknown names.
Modality modality_from_name(std::string_view name);
inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

// Identity label of a clip whose person is outside the training vocabulary.
inline constexpr int kDistractor = -1;

// Clip-duration bounds in seconds, both inclusive.
inline constexpr double kMinClipSeconds = 1.0;
inline constexpr double kMaxClipSeconds = 30.0;

struct FrameEmbedding {
  std::vector<float> vector;
  float quality = 0.0f;

  bool operator==(const FrameEmbedding&) const = default;
};

struct ClipRecord {
  std::string clip_id;
  int identity = kDistractor;
  double duration_s = 0.0;
  // One (possibly empty) frame sequence per modality, indexed by Modality.
  std::array<std::vector<FrameEmbedding>, kModalityCount> streams;

  const std::vector<FrameEmbedding>& stream(Modality m) const { return streams[index_of(m)]; }
  std::vector<FrameEmbedding>& stream(Modality m) { return streams[index_of(m)]; }
  bool has(Modality m) const { return !stream(m).empty(); }
  bool is_distractor() const { return identity == kDistractor; }

  bool operator==(const ClipRecord&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  // Identity names; labels are indices into this list.
  std::vector<std::string> vocabulary;

  std::size_t num_classes() const { return vocabulary.size(); }
  bool operator==(const DatasetSplit&) const = default;
};

struct Dataset {
  std::vector<ClipRecord> clips;
  DatasetSplit split;

  // Clips of one split in split-list order. Throws if an id is unknown.
  std::vector<const ClipRecord*> select(const std::vector<std::string>& ids) const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws DatasetError describing the first violated ClipRecord invariant.
void validate_clip(const ClipRecord& clip, std::size_t num_classes);
// Throws DatasetError if the split lists overlap, reference unknown clips,
// or place distractors in train.
void validate_split(const std::vector<ClipRecord>& clips, const DatasetSplit& split);

// Layout:
//   dataset.json                      {"format_version":1,"vocabulary":[...]}
//   manifest.jsonl                    one record per clip
//   blobs/<clip_id>.<modality>.f32    frames x dim float32 LE, then frames
//                                     float32 quality scores
void write_dataset(const std::vector<ClipRecord>& clips, const DatasetSplit& split,
                   const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Size in bytes of one blob for the given frame count and dimension.
constexpr std::size_t blob_bytes(std::size_t frames, std::size_t dim) {
  return (frames * dim + frames) * sizeof(float);
}

}  // namespace mmpid
