#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmpid {

struct DetectionFrame {
  std::vector<double> head_areas;  // one bounding-box area per detected head
  std::optional<std::string> face_id;
  std::optional<std::string> clothes_cluster;
};

struct RawClip {
  std::string clip_id;
  double duration_s = 0.0;
  std::vector<DetectionFrame> frames;
};

inline constexpr double kDominantHeadRatio = 3.0;
inline constexpr double kValidFrameRatio = 0.30;

// Keep iff 1.0 <= duration_s <= 30.0.
bool duration_gate(const RawClip& clip);

// One head, or the largest head area is at least three times the second
// largest. No heads: not valid.
bool is_valid_frame(const DetectionFrame& frame);

// Valid-frame ratio strictly above 30%.
bool is_valid_clip(const RawClip& clip);
double valid_frame_ratio(const RawClip& clip);

// Most frequent present label; nullopt (UNKNOWN) when none is present or the
// top count is tied. Throws std::invalid_argument for an empty list.
std::optional<std::string> majority_vote_cluster(std::span<const std::optional<std::string>> members);

// Throws std::invalid_argument with the 1-based line number on a malformed
// record. Records: {"clip_id", "duration_s", "frames": [{"head_areas": [...],
// "face_id"?: str, "clothes_cluster"?: str}]}.
std::vector<RawClip> parse_annotations(const std::string& jsonl);

struct ClipDecision {
  std::string clip_id;
  bool keep = false;
  std::vector<std::string> reasons;  // failed rules, empty when kept
  double valid_frame_ratio = 0.0;
  std::optional<std::string> identity;  // from own faces, else inherited from clothes cluster
  std::string identity_source;          // "face", "cluster" or "none"
};

struct ClusterLabel {
  std::string cluster;
  std::optional<std::string> label;
  std::size_t votes = 0;  // frames carrying a face id inside the cluster
};

struct FilterResult {
  std::vector<ClipDecision> clips;
  std::vector<ClusterLabel> clusters;
};

// Applies the duration gate and valid-clip rule, labels clothes clusters by
// majority vote over the face ids propagated to them, and labels each kept
// clip from its own faces or, failing that, from its dominant cluster.
FilterResult apply_filters(std::span<const RawClip> clips);
std::string filter_result_to_json(const FilterResult& result);

}  // namespace mmpid
