#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mmpid/dataset.hpp"
#include "mmpid/train.hpp"

namespace mmpid {

struct AblationRow {
  std::string name;
  SlotMask slots{};
  bool use_mma = false;
  // Members > 1: each member trains on the training set minus one of
  // `ensemble` disjoint, identity-stratified shards; scores are summed.
  std::size_t ensemble = 1;
};

struct AblationGrid {
  TrainConfig train;
  std::vector<AblationRow> rows;
};

// Slots for a list of modalities. Face contributes the quality-weighted average
// plus either the plain average or, when `netvlad` is set, the NetVLAD slot.
SlotMask slots_for(const std::vector<Modality>& modalities, bool netvlad);

// Face; Head; Audio; Body; Face+Head; Face+Head+Audio; Face+Head+Audio+Body;
// Ensemble; +NetVLAD; +NetVLAD+MMA.
AblationGrid default_ablation_grid();

// {"train": {...TrainConfig...}, "rows": [{"name": ..., "modalities": [...],
//  "netvlad": bool, "mma": bool, "ensemble": n} | {"name": ..., "slots": [...], ...}]}
// A missing "rows" key selects the default rows.
AblationGrid ablation_grid_from_json(const std::string& text);
std::string ablation_grid_to_json(const AblationGrid& grid);

struct AblationRowResult {
  std::string name;
  double map = 0.0;
  std::vector<double> member_maps;
  double seconds = 0.0;
};

struct AblationReport {
  std::vector<AblationRowResult> rows;
  const AblationRowResult& row(const std::string& name) const;
};

using AblationCallback = std::function<void(const AblationRowResult&)>;

// Trains each row on the train split and reports MAP@100 on the test split.
AblationReport run_ablation(const Dataset& dataset, const AblationGrid& grid, const AblationCallback& on_row = {});

std::string ablation_report_to_json(const AblationReport& report);
std::string ablation_report_table(const AblationReport& report);

}  // namespace mmpid
