#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace mmpid {

inline constexpr std::size_t kRetrievalDepth = 100;

struct ScoredClip {
  std::string clip_id;
  int identity;                 // ground truth; kDistractor for distractors
  std::vector<double> scores;   // one per vocabulary identity
};

struct RankedEntry {
  std::string clip_id;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

// Clips sorted by descending scores[identity], ties by clip_id, truncated to k.
// Throws std::out_of_range if identity is outside the score vectors.
std::vector<RankedEntry> rank_for_identity(std::span<const ScoredClip> clips, int identity,
                                           std::size_t k = kRetrievalDepth);

// (1/m) * sum over the positives found in `ranked` of (j / rank of j-th positive).
// The denominator stays m even when some positives fall outside the list.
// Returns nullopt when m == 0 (AP undefined).
std::optional<double> average_precision(std::span<const RankedEntry> ranked,
                                        const std::unordered_set<std::string>& positives, std::size_t m);

// Unweighted mean. Throws std::invalid_argument on an empty list.
double mean_average_precision(std::span<const double> aps);

struct IdentityRetrieval {
  int identity = 0;
  std::string name;
  std::size_t positives = 0;
  double ap = 0.0;
  std::vector<RankedEntry> ranked;
};

struct RetrievalRun {
  std::vector<IdentityRetrieval> identities;  // identities with at least one positive
  std::vector<int> skipped;                   // identities with no positives
  double map = 0.0;
};

// Ranks every clip for every vocabulary identity and computes MAP over the
// identities that have positives.
RetrievalRun evaluate_retrieval(std::span<const ScoredClip> clips, const std::vector<std::string>& vocabulary,
                                std::size_t k = kRetrievalDepth, std::size_t threads = 0);

std::string retrieval_run_to_json(const RetrievalRun& run, bool include_rankings = true);
std::string retrieval_run_table(const RetrievalRun& run, std::size_t max_rows = 20);

// One JSON line per clip: clip_id, identity, and the `top` best-scoring
// identities with their scores.
std::string prediction_dump(std::span<const ScoredClip> clips, const std::vector<std::string>& vocabulary,
                            std::size_t top = 5);

}  // namespace mmpid
