#include "mmpid/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmpid/dataset.hpp"
#include "mmpid/numerics.hpp"

namespace mmpid {

using nlohmann::json;

std::vector<RankedEntry> rank_for_identity(std::span<const ScoredClip> clips, int identity, std::size_t k) {
  std::vector<std::size_t> idx(clips.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (const auto& c : clips) {
    if (identity < 0 || static_cast<std::size_t>(identity) >= c.scores.size()) {
      throw std::out_of_range("rank_for_identity: identity " + std::to_string(identity) +
                              " outside vocabulary for clip " + c.clip_id);
    }
  }
  const auto id = static_cast<std::size_t>(identity);
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = clips[a].scores[id];
    const double sb = clips[b].scores[id];
    if (sa != sb) return sa > sb;
    return clips[a].clip_id < clips[b].clip_id;
  };
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), better);
  std::vector<RankedEntry> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({clips[idx[i]].clip_id, clips[idx[i]].scores[id]});
  return out;
}

std::optional<double> average_precision(std::span<const RankedEntry> ranked,
                                        const std::unordered_set<std::string>& positives, std::size_t m) {
  if (m == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t found = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (positives.contains(ranked[r].clip_id)) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(m);
}

double mean_average_precision(std::span<const double> aps) {
  if (aps.empty()) throw std::invalid_argument("mean_average_precision: no identities with positives");
  double s = 0.0;
  for (double a : aps) s += a;
  return s / static_cast<double>(aps.size());
}

RetrievalRun evaluate_retrieval(std::span<const ScoredClip> clips, const std::vector<std::string>& vocabulary,
                                std::size_t k, std::size_t threads) {
  std::vector<std::unordered_set<std::string>> positives(vocabulary.size());
  for (const auto& c : clips) {
    if (c.scores.size() != vocabulary.size()) {
      throw std::invalid_argument("evaluate_retrieval: clip " + c.clip_id + " has " + std::to_string(c.scores.size()) +
                                  " scores for a vocabulary of " + std::to_string(vocabulary.size()));
    }
    if (c.identity != kDistractor) {
      if (c.identity < 0 || static_cast<std::size_t>(c.identity) >= vocabulary.size()) {
        throw std::invalid_argument("evaluate_retrieval: clip " + c.clip_id + " has an invalid label");
      }
      positives[static_cast<std::size_t>(c.identity)].insert(c.clip_id);
    }
  }
  std::vector<std::optional<IdentityRetrieval>> per(vocabulary.size());
  parallel_for(vocabulary.size(), threads, [&](std::size_t id) {
    if (positives[id].empty()) return;
    IdentityRetrieval r;
    r.identity = static_cast<int>(id);
    r.name = vocabulary[id];
    r.positives = positives[id].size();
    r.ranked = rank_for_identity(clips, static_cast<int>(id), k);
    r.ap = *average_precision(r.ranked, positives[id], r.positives);
    per[id] = std::move(r);
  });
  RetrievalRun run;
  std::vector<double> aps;
  for (std::size_t id = 0; id < per.size(); ++id) {
    if (per[id]) {
      aps.push_back(per[id]->ap);
      run.identities.push_back(std::move(*per[id]));
    } else {
      run.skipped.push_back(static_cast<int>(id));
    }
  }
  run.map = mean_average_precision(aps);
  return run;
}

std::string retrieval_run_to_json(const RetrievalRun& run, bool include_rankings) {
  json ids = json::array();
  for (const auto& r : run.identities) {
    json e = {{"identity", r.identity}, {"name", r.name}, {"positives", r.positives}, {"ap", r.ap}};
    if (include_rankings) {
      json ranked = json::array();
      for (const auto& x : r.ranked) ranked.push_back({{"clip_id", x.clip_id}, {"score", x.score}});
      e["ranked"] = std::move(ranked);
    }
    ids.push_back(std::move(e));
  }
  json j = {{"map", run.map}, {"depth", kRetrievalDepth}, {"identities", ids}, {"skipped_identities", run.skipped}};
  return j.dump(1);
}

std::string retrieval_run_table(const RetrievalRun& run, std::size_t max_rows) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-24s %9s %8s\n", "identity", "positives", "AP(%)");
  os << line;
  std::vector<const IdentityRetrieval*> rows;
  for (const auto& r : run.identities) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->ap < b->ap; });
  for (std::size_t i = 0; i < rows.size() && i < max_rows; ++i) {
    std::snprintf(line, sizeof line, "%-24s %9zu %8.2f\n", rows[i]->name.c_str(), rows[i]->positives, 100.0 * rows[i]->ap);
    os << line;
  }
  if (rows.size() > max_rows) os << "... (" << rows.size() - max_rows << " more, lowest AP shown first)\n";
  std::snprintf(line, sizeof line, "MAP@%zu over %zu identities: %.2f%%\n", kRetrievalDepth, run.identities.size(),
                100.0 * run.map);
  os << line;
  if (!run.skipped.empty()) os << run.skipped.size() << " identities skipped (no positives)\n";
  return os.str();
}

std::string prediction_dump(std::span<const ScoredClip> clips, const std::vector<std::string>& vocabulary,
                            std::size_t top) {
  std::ostringstream os;
  for (const auto& c : clips) {
    std::vector<std::size_t> idx(c.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t keep = std::min(top, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (c.scores[a] != c.scores[b]) return c.scores[a] > c.scores[b];
                        return a < b;
                      });
    json best = json::array();
    for (std::size_t i = 0; i < keep; ++i)
      best.push_back({{"identity", vocabulary.at(idx[i])}, {"score", c.scores[idx[i]]}});
    json line = {{"clip_id", c.clip_id}, {"top", best}};
    if (c.identity == kDistractor) {
      line["identity"] = "DISTRACTOR";
    } else {
      line["identity"] = vocabulary.at(static_cast<std::size_t>(c.identity));
    }
    os << line.dump() << '\n';
  }
  return os.str();
}

}  // namespace mmpid
