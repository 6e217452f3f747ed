#include "mmpid/curation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmpid/dataset.hpp"

namespace mmpid {

using nlohmann::json;

bool duration_gate(const RawClip& clip) {
  return clip.duration_s >= kMinClipSeconds && clip.duration_s <= kMaxClipSeconds;
}

bool is_valid_frame(const DetectionFrame& frame) {
  const auto& a = frame.head_areas;
  if (a.empty()) return false;
  if (a.size() == 1) return true;
  double first = 0.0, second = 0.0;
  for (double v : a) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first >= kDominantHeadRatio * second;
}

double valid_frame_ratio(const RawClip& clip) {
  if (clip.frames.empty()) return 0.0;
  std::size_t valid = 0;
  for (const auto& f : clip.frames) valid += is_valid_frame(f) ? 1 : 0;
  return static_cast<double>(valid) / static_cast<double>(clip.frames.size());
}

bool is_valid_clip(const RawClip& clip) {
  if (clip.frames.empty()) return false;
  std::size_t valid = 0;
  for (const auto& f : clip.frames) valid += is_valid_frame(f) ? 1 : 0;
  // valid / total > 3 / 10, in integers so 3 of 10 is not above the threshold.
  return valid * 10 > clip.frames.size() * 3;
}

std::optional<std::string> majority_vote_cluster(std::span<const std::optional<std::string>> members) {
  if (members.empty()) throw std::invalid_argument("majority_vote_cluster: empty cluster");
  std::map<std::string, std::size_t> counts;
  for (const auto& m : members)
    if (m) ++counts[*m];
  std::optional<std::string> best;
  std::size_t best_count = 0;
  bool tied = false;
  for (const auto& [label, n] : counts) {
    if (n > best_count) {
      best = label;
      best_count = n;
      tied = false;
    } else if (n == best_count) {
      tied = true;
    }
  }
  if (tied) return std::nullopt;
  return best;
}

std::vector<RawClip> parse_annotations(const std::string& jsonl) {
  std::vector<RawClip> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "annotations line " + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(line);
      RawClip clip;
      clip.clip_id = j.at("clip_id").get<std::string>();
      clip.duration_s = j.at("duration_s").get<double>();
      if (!(clip.duration_s > 0.0) || !std::isfinite(clip.duration_s)) {
        throw std::invalid_argument(where + "duration_s must be positive");
      }
      for (const auto& fj : j.at("frames")) {
        DetectionFrame f;
        f.head_areas = fj.value("head_areas", std::vector<double>{});
        for (double a : f.head_areas) {
          if (!(a > 0.0)) throw std::invalid_argument(where + "head areas must be positive");
        }
        if (fj.contains("face_id") && !fj.at("face_id").is_null()) f.face_id = fj.at("face_id").get<std::string>();
        if (fj.contains("clothes_cluster") && !fj.at("clothes_cluster").is_null()) {
          f.clothes_cluster = fj.at("clothes_cluster").get<std::string>();
        }
        clip.frames.push_back(std::move(f));
      }
      if (clip.frames.empty()) throw std::invalid_argument(where + "clip has no frames");
      out.push_back(std::move(clip));
    } catch (const json::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return out;
}

FilterResult apply_filters(std::span<const RawClip> clips) {
  FilterResult result;
  std::map<std::string, std::vector<std::optional<std::string>>> cluster_members;
  for (const auto& clip : clips) {
    ClipDecision d;
    d.clip_id = clip.clip_id;
    d.valid_frame_ratio = valid_frame_ratio(clip);
    if (!duration_gate(clip)) {
      d.reasons.push_back(clip.duration_s < kMinClipSeconds ? "duration_below_1s" : "duration_above_30s");
    }
    if (!is_valid_clip(clip)) d.reasons.push_back("valid_frame_ratio_not_above_30pct");
    d.keep = d.reasons.empty();
    if (d.keep) {
      for (const auto& f : clip.frames)
        if (f.clothes_cluster) cluster_members[*f.clothes_cluster].push_back(f.face_id);
    }
    result.clips.push_back(std::move(d));
  }
  std::map<std::string, std::optional<std::string>> cluster_label;
  for (const auto& [cluster, members] : cluster_members) {
    ClusterLabel cl{cluster, majority_vote_cluster(members), 0};
    for (const auto& m : members) cl.votes += m ? 1 : 0;
    cluster_label[cluster] = cl.label;
    result.clusters.push_back(std::move(cl));
  }
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ClipDecision& d = result.clips[i];
    d.identity_source = "none";
    if (!d.keep) continue;
    std::vector<std::optional<std::string>> faces;
    std::vector<std::optional<std::string>> inherited;
    for (const auto& f : clips[i].frames) {
      faces.push_back(f.face_id);
      if (f.clothes_cluster) inherited.push_back(cluster_label[*f.clothes_cluster]);
    }
    if (auto own = majority_vote_cluster(faces)) {
      d.identity = own;
      d.identity_source = "face";
    } else if (!inherited.empty()) {
      if (auto from_cluster = majority_vote_cluster(inherited)) {
        d.identity = from_cluster;
        d.identity_source = "cluster";
      }
    }
  }
  return result;
}

std::string filter_result_to_json(const FilterResult& result) {
  json clips = json::array();
  std::size_t kept = 0;
  for (const auto& d : result.clips) {
    kept += d.keep ? 1 : 0;
    clips.push_back({{"clip_id", d.clip_id},
                     {"keep", d.keep},
                     {"reasons", d.reasons},
                     {"valid_frame_ratio", d.valid_frame_ratio},
                     {"identity", d.identity ? json(*d.identity) : json("UNKNOWN")},
                     {"identity_source", d.identity_source}});
  }
  json clusters = json::array();
  for (const auto& c : result.clusters) {
    clusters.push_back({{"cluster", c.cluster}, {"label", c.label ? json(*c.label) : json("UNKNOWN")}, {"votes", c.votes}});
  }
  return json{{"clips", clips},
              {"clusters", clusters},
              {"summary", {{"total", result.clips.size()}, {"kept", kept}, {"dropped", result.clips.size() - kept}}}}
      .dump(1);
}

}  // namespace mmpid
