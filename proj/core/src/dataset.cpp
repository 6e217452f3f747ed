#include "mmpid/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace mmpid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr std::string_view kDistractorTag = "DISTRACTOR";

bool safe_clip_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

void write_blob(const fs::path& path, const std::vector<FrameEmbedding>& frames) {
  std::vector<std::uint32_t> words;
  const std::size_t dim = frames.front().vector.size();
  words.reserve(frames.size() * (dim + 1));
  for (const auto& f : frames)
    for (float v : f.vector) words.push_back(to_le(std::bit_cast<std::uint32_t>(v)));
  for (const auto& f : frames) words.push_back(to_le(std::bit_cast<std::uint32_t>(f.quality)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open blob for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw DatasetError("failed writing blob: " + path.string());
}

std::vector<FrameEmbedding> read_blob(const fs::path& path, const std::string& clip_id,
                                      std::size_t frames, std::size_t dim) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw DatasetError("clip " + clip_id + ": cannot stat blob " + path.string());
  if (size != blob_bytes(frames, dim)) {
    throw DatasetError("clip " + clip_id + ": blob size mismatch for " + path.string() +
                       " (expected " + std::to_string(blob_bytes(frames, dim)) + " bytes, found " +
                       std::to_string(size) + ")");
  }
  std::vector<std::uint32_t> words(frames * (dim + 1));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("clip " + clip_id + ": cannot open blob " + path.string());
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!in) throw DatasetError("clip " + clip_id + ": short read on blob " + path.string());

  std::vector<FrameEmbedding> out(frames);
  std::size_t w = 0;
  for (auto& f : out) {
    f.vector.resize(dim);
    for (float& v : f.vector) v = std::bit_cast<float>(to_le(words[w++]));
  }
  for (auto& f : out) f.quality = std::bit_cast<float>(to_le(words[w++]));
  return out;
}

std::string blob_name(const std::string& clip_id, Modality m) {
  return clip_id + "." + std::string(modality_name(m)) + ".f32";
}

std::string format_seconds(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kFace: return "face";
    case Modality::kHead: return "head";
    case Modality::kBody: return "body";
    case Modality::kAudio: return "audio";
  }
  return "unknown";
}

Modality modality_from_name(std::string_view name) {
  for (Modality m : kAllModalities)
    if (modality_name(m) == name) return m;
  throw std::invalid_argument("unknown modality: " + std::string(name));
}

std::vector<const ClipRecord*> Dataset::select(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string_view, const ClipRecord*> by_id;
  by_id.reserve(clips.size());
  for (const auto& c : clips) by_id.emplace(c.clip_id, &c);
  std::vector<const ClipRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DatasetError("unknown clip id in split: " + id);
    out.push_back(it->second);
  }
  return out;
}

void validate_clip(const ClipRecord& clip, std::size_t num_classes) {
  const std::string who = "clip " + clip.clip_id + ": ";
  if (!safe_clip_id(clip.clip_id)) {
    throw DatasetError("invalid clip id '" + clip.clip_id + "' (allowed: [A-Za-z0-9_.-])");
  }
  if (!std::isfinite(clip.duration_s) || clip.duration_s < kMinClipSeconds) {
    throw DatasetError(who + "duration " + format_seconds(clip.duration_s) +
                       " s is shorter than the 1 second minimum");
  }
  if (clip.duration_s > kMaxClipSeconds) {
    throw DatasetError(who + "duration " + format_seconds(clip.duration_s) +
                       " s exceeds the 30 second maximum");
  }
  if (clip.identity != kDistractor &&
      (clip.identity < 0 || static_cast<std::size_t>(clip.identity) >= num_classes)) {
    throw DatasetError(who + "identity " + std::to_string(clip.identity) +
                       " outside vocabulary of size " + std::to_string(num_classes));
  }
  for (Modality m : kAllModalities) {
    const auto& frames = clip.stream(m);
    if (frames.empty()) continue;
    const std::size_t dim = frames.front().vector.size();
    if (dim == 0) throw DatasetError(who + std::string(modality_name(m)) + " has zero dimension");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto& f = frames[t];
      if (f.vector.size() != dim) {
        throw DatasetError(who + std::string(modality_name(m)) + " frame " + std::to_string(t) +
                           " has inconsistent dimension");
      }
      for (float v : f.vector) {
        if (!std::isfinite(v)) {
          throw DatasetError(who + std::string(modality_name(m)) + " frame " +
                             std::to_string(t) + " has a non-finite value");
        }
      }
      if (!std::isfinite(f.quality) || f.quality < 0.0f) {
        throw DatasetError(who + std::string(modality_name(m)) + " frame " + std::to_string(t) +
                           " has invalid quality score");
      }
    }
  }
}

void validate_split(const std::vector<ClipRecord>& clips, const DatasetSplit& split) {
  std::unordered_map<std::string_view, const ClipRecord*> by_id;
  for (const auto& c : clips) {
    if (!by_id.emplace(c.clip_id, &c).second) throw DatasetError("duplicate clip id " + c.clip_id);
  }
  std::unordered_set<std::string_view> seen;
  auto check = [&](const std::vector<std::string>& ids, std::string_view name, bool allow_distractors) {
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw DatasetError(std::string(name) + " split references unknown clip " + id);
      }
      if (!seen.insert(id).second) throw DatasetError("clip " + id + " appears in more than one split");
      if (!allow_distractors && it->second->is_distractor()) {
        throw DatasetError("train split contains distractor clip " + id);
      }
    }
  };
  check(split.train, "train", false);
  check(split.val, "val", true);
  check(split.test, "test", true);
}

void write_dataset(const std::vector<ClipRecord>& clips, const DatasetSplit& split,
                   const fs::path& dir) {
  for (const auto& c : clips) validate_clip(c, split.num_classes());
  validate_split(clips, split);

  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw DatasetError("cannot create directory " + (dir / "blobs").string() + ": " + ec.message());

  json header = {{"format_version", kFormatVersion},
                 {"vocabulary", split.vocabulary},
                 {"splits", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};
  {
    std::ofstream out(dir / "dataset.json", std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + (dir / "dataset.json").string());
    out << header.dump(1) << '\n';
  }

  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw DatasetError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& clip : clips) {
    json rec;
    rec["clip_id"] = clip.clip_id;
    if (clip.is_distractor()) {
      rec["identity"] = kDistractorTag;
    } else {
      rec["identity"] = clip.identity;
    }
    rec["duration_s"] = clip.duration_s;
    json mods = json::object();
    for (Modality m : kAllModalities) {
      const auto& frames = clip.stream(m);
      if (frames.empty()) continue;
      const std::string rel = "blobs/" + blob_name(clip.clip_id, m);
      write_blob(dir / rel, frames);
      mods[std::string(modality_name(m))] = {
          {"blob", rel}, {"frames", frames.size()}, {"dim", frames.front().vector.size()}};
    }
    rec["modalities"] = std::move(mods);
    manifest << rec.dump() << '\n';
  }
  if (!manifest) throw DatasetError("failed writing " + (dir / "manifest.jsonl").string());
}

Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  {
    const fs::path header_path = dir / "dataset.json";
    std::ifstream in(header_path);
    if (!in) throw DatasetError("missing " + header_path.string());
    json header;
    try {
      header = json::parse(in);
      if (header.at("format_version").get<int>() != kFormatVersion) {
        throw DatasetError(header_path.string() + ": unsupported format_version");
      }
      ds.split.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
      const auto& s = header.at("splits");
      ds.split.train = s.at("train").get<std::vector<std::string>>();
      ds.split.val = s.at("val").get<std::vector<std::string>>();
      ds.split.test = s.at("test").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DatasetError(header_path.string() + ": " + e.what());
    }
  }

  const fs::path manifest_path = dir / "manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DatasetError("missing " + manifest_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no) + ": ";
    ClipRecord clip;
    json rec;
    try {
      rec = json::parse(line);
      clip.clip_id = rec.at("clip_id").get<std::string>();
      const auto& id = rec.at("identity");
      if (id.is_string()) {
        if (id.get<std::string>() != kDistractorTag) throw DatasetError(where + "bad identity tag");
        clip.identity = kDistractor;
      } else {
        clip.identity = id.get<int>();
        if (clip.identity < 0) throw DatasetError(where + "negative identity");
      }
      clip.duration_s = rec.at("duration_s").get<double>();
    } catch (const json::exception& e) {
      throw DatasetError(where + "malformed record: " + e.what());
    }
    // Duration and label checks run before touching blobs.
    ClipRecord header_only = clip;
    try {
      validate_clip(header_only, ds.split.num_classes());
    } catch (const DatasetError& e) {
      throw DatasetError(where + e.what());
    }
    try {
      for (const auto& [name, desc] : rec.at("modalities").items()) {
        const Modality m = modality_from_name(name);
        const auto frames = desc.at("frames").get<std::size_t>();
        const auto dim = desc.at("dim").get<std::size_t>();
        if (frames == 0 || dim == 0) throw DatasetError(where + "empty modality " + name);
        const auto rel = desc.at("blob").get<std::string>();
        clip.stream(m) = read_blob(dir / rel, clip.clip_id, frames, dim);
      }
    } catch (const json::exception& e) {
      throw DatasetError(where + "malformed modalities: " + e.what());
    } catch (const std::invalid_argument& e) {
      throw DatasetError(where + e.what());
    }
    validate_clip(clip, ds.split.num_classes());
    ds.clips.push_back(std::move(clip));
  }
  validate_split(ds.clips, ds.split);
  return ds;
}

}  // namespace mmpid
