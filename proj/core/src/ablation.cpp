#include "mmpid/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmpid/retrieval.hpp"
#include "mmpid/rng.hpp"

namespace mmpid {

using nlohmann::json;

namespace {

AblationRow make_row(std::string name, const std::vector<Modality>& mods, bool netvlad, bool mma,
                     std::size_t ensemble) {
  return {std::move(name), slots_for(mods, netvlad), mma, ensemble};
}

// Partition of the training clips into identity-stratified shards.
std::vector<std::size_t> shard_assignment(std::span<const ClipInputs> train, std::size_t shards, std::uint64_t seed) {
  std::vector<std::size_t> shard(train.size(), 0);
  if (shards <= 1) return shard;
  std::vector<std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto id = static_cast<std::size_t>(train[i].identity);
    if (by_identity.size() <= id) by_identity.resize(id + 1);
    by_identity[id].push_back(i);
  }
  Rng rng(derive_seed(seed, std::string_view("ensemble-shards")));
  for (auto& members : by_identity) {
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.uniform_index(i)]);
    for (std::size_t k = 0; k < members.size(); ++k) shard[members[k]] = k % shards;
  }
  return shard;
}

std::vector<ScoredClip> score(const std::vector<std::vector<double>>& probs, std::span<const ClipInputs> clips) {
  std::vector<ScoredClip> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) out.push_back({clips[i].clip_id, clips[i].identity, probs[i]});
  return out;
}

}  // namespace

SlotMask slots_for(const std::vector<Modality>& modalities, bool netvlad) {
  SlotMask s{};
  for (Modality m : modalities) {
    switch (m) {
      case Modality::kFace:
        s[static_cast<std::size_t>(Slot::kFaceVlad)] = netvlad;
        s[static_cast<std::size_t>(Slot::kFaceAvg)] = !netvlad;
        s[static_cast<std::size_t>(Slot::kFaceQuality)] = true;
        break;
      case Modality::kHead: s[static_cast<std::size_t>(Slot::kHead)] = true; break;
      case Modality::kBody: s[static_cast<std::size_t>(Slot::kBody)] = true; break;
      case Modality::kAudio: s[static_cast<std::size_t>(Slot::kAudio)] = true; break;
    }
  }
  return s;
}

AblationGrid default_ablation_grid() {
  using M = Modality;
  const std::vector<M> all = {M::kFace, M::kHead, M::kAudio, M::kBody};
  AblationGrid g;
  g.rows = {
      make_row("Face", {M::kFace}, false, false, 1),
      make_row("Head", {M::kHead}, false, false, 1),
      make_row("Audio", {M::kAudio}, false, false, 1),
      make_row("Body", {M::kBody}, false, false, 1),
      make_row("Face+Head", {M::kFace, M::kHead}, false, false, 1),
      make_row("Face+Head+Audio", {M::kFace, M::kHead, M::kAudio}, false, false, 1),
      make_row("Face+Head+Audio+Body", all, false, false, 1),
      make_row("Ensemble", all, false, false, 3),
      make_row("+NetVLAD", all, true, false, 3),
      make_row("+NetVLAD+MMA", all, true, true, 3),
  };
  return g;
}

AblationGrid ablation_grid_from_json(const std::string& text) {
  AblationGrid grid = default_ablation_grid();
  try {
    const json j = json::parse(text);
    for (const auto& [key, _] : j.items()) {
      if (key != "train" && key != "rows") throw std::invalid_argument("ablation grid: unknown key '" + key + "'");
    }
    if (j.contains("train")) grid.train = train_config_from_json(j.at("train").dump());
    if (j.contains("rows")) {
      grid.rows.clear();
      for (const auto& r : j.at("rows")) {
        AblationRow row;
        row.name = r.at("name").get<std::string>();
        const bool netvlad = r.value("netvlad", false);
        if (r.contains("slots")) {
          for (const auto& s : r.at("slots")) row.slots[slot_from_name(s.get<std::string>())] = true;
        } else {
          std::vector<Modality> mods;
          for (const auto& m : r.at("modalities")) mods.push_back(modality_from_name(m.get<std::string>()));
          row.slots = slots_for(mods, netvlad);
        }
        row.use_mma = r.value("mma", false);
        row.ensemble = r.value("ensemble", std::size_t{1});
        if (row.ensemble == 0) throw std::invalid_argument("ablation grid: ensemble must be at least 1");
        grid.rows.push_back(std::move(row));
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("ablation grid: ") + e.what());
  }
  if (grid.rows.empty()) throw std::invalid_argument("ablation grid: no rows");
  return grid;
}

std::string ablation_grid_to_json(const AblationGrid& grid) {
  json rows = json::array();
  for (const auto& r : grid.rows) {
    json slots = json::array();
    for (std::size_t s = 0; s < kSlotCount; ++s)
      if (r.slots[s]) slots.push_back(std::string(slot_name(s)));
    rows.push_back({{"name", r.name}, {"slots", slots}, {"mma", r.use_mma}, {"ensemble", r.ensemble}});
  }
  return json{{"train", json::parse(train_config_to_json(grid.train))}, {"rows", rows}}.dump(2);
}

const AblationRowResult& AblationReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw std::out_of_range("ablation report has no row named " + name);
}

AblationReport run_ablation(const Dataset& dataset, const AblationGrid& grid, const AblationCallback& on_row) {
  const TrainConfig& base = grid.train;
  const std::size_t threads = base.threads;
  const auto train_inputs = prepare_inputs(dataset.select(dataset.split.train), base.model, threads);
  const auto test_inputs = prepare_inputs(dataset.select(dataset.split.test), base.model, threads);
  const auto& vocab = dataset.split.vocabulary;

  AblationReport report;
  for (const auto& row : grid.rows) {
    const auto start = std::chrono::steady_clock::now();
    TrainConfig cfg = base;
    cfg.model.slots = row.slots;
    cfg.model.use_mma = row.use_mma;

    const auto shard = shard_assignment(train_inputs, row.ensemble, base.seed);
    std::vector<std::vector<double>> summed(test_inputs.size(), std::vector<double>(vocab.size(), 0.0));
    AblationRowResult result{row.name, 0.0, {}, 0.0};
    for (std::size_t member = 0; member < row.ensemble; ++member) {
      std::vector<ClipInputs> subset;
      for (std::size_t i = 0; i < train_inputs.size(); ++i)
        if (row.ensemble == 1 || shard[i] != member) subset.push_back(train_inputs[i]);
      cfg.seed = row.ensemble == 1 ? base.seed : derive_seed(base.seed, member);
      TrainResult trained = train(subset, vocab, cfg);
      const auto probs = trained.model.predict(test_inputs, threads);
      if (row.ensemble > 1) {
        result.member_maps.push_back(evaluate_retrieval(score(probs, test_inputs), vocab, kRetrievalDepth, threads).map);
      }
      for (std::size_t i = 0; i < probs.size(); ++i)
        for (std::size_t c = 0; c < vocab.size(); ++c) summed[i][c] += probs[i][c];
    }
    result.map = evaluate_retrieval(score(summed, test_inputs), vocab, kRetrievalDepth, threads).map;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_row) on_row(result);
    report.rows.push_back(std::move(result));
  }
  return report;
}

std::string ablation_report_to_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"name", r.name}, {"map", r.map}, {"member_maps", r.member_maps}, {"seconds", r.seconds}});
  }
  return json{{"rows", rows}}.dump(2);
}

std::string ablation_report_table(const AblationReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %9s  %s\n", "Modal", "MAP (%)", "members");
  os << line;
  for (const auto& r : report.rows) {
    std::string members;
    for (double m : r.member_maps) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%s%.2f", members.empty() ? "" : " ", 100.0 * m);
      members += buf;
    }
    std::snprintf(line, sizeof line, "%-26s %9.2f  %s\n", r.name.c_str(), 100.0 * r.map, members.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace mmpid
