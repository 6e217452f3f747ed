#include "cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmpid/ablation.hpp"
#include "mmpid/checkpoint.hpp"
#include "mmpid/curation.hpp"
#include "mmpid/dataset.hpp"
#include "mmpid/retrieval.hpp"
#include "mmpid/synthgen.hpp"
#include "mmpid/train.hpp"

namespace mmpid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

fs::path with_extension(fs::path p, const char* ext) {
  p.replace_extension(ext);
  return p;
}

const std::vector<std::string>& split_ids(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.split.train;
  if (split == "val") return ds.split.val;
  if (split == "test") return ds.split.test;
  throw std::invalid_argument("unknown split '" + split + "' (expected train, val or test)");
}

struct GenerateArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string data_dir;
  std::string config;
  std::string checkpoint;
  std::string log;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string data_dir;
  std::vector<std::string> ensemble;
  std::string split = "test";
  std::string out = "retrieval.json";
  std::string predictions;
  std::size_t threads = 0;
};

struct AblateArgs {
  std::string data_dir;
  std::string grid;
  std::string out = "ablation.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

struct FilterArgs {
  std::string annotations;
  std::string out = "decisions.json";
};

struct InspectArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out = "inspect.json";
  std::size_t threads = 0;
};

int run_generate(const GenerateArgs& a) {
  GenConfig cfg = gen_config_from_json(read_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const Dataset ds = generate_benchmark(cfg);
  write_dataset(ds.clips, ds.split, a.out_dir);
  std::cerr << "generated " << ds.clips.size() << " clips (" << ds.split.train.size() << " train, "
            << ds.split.val.size() << " val, " << ds.split.test.size() << " test) for "
            << ds.split.vocabulary.size() << " identities into " << a.out_dir << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = train_config_from_json(read_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  const Dataset ds = read_dataset(a.data_dir);
  const fs::path log_path = a.log.empty() ? fs::path(a.checkpoint + ".log.jsonl") : fs::path(a.log);
  std::ostringstream log;
  TrainResult result = train(ds, cfg, [&](const EpochLog& e) {
    const json line = {{"epoch", e.epoch}, {"step", e.step}, {"loss", e.loss}, {"accuracy", e.accuracy},
                       {"learning_rate", e.learning_rate}};
    log << line.dump() << '\n';
    std::cerr << "epoch " << e.epoch << " step " << e.step << " loss " << e.loss << " acc " << e.accuracy << "\n";
  });
  write_file(log_path, log.str());
  save_checkpoint(result.model, a.checkpoint, result.report);
  std::cerr << "final train loss " << result.report.final_loss << " accuracy " << result.report.final_accuracy
            << "; checkpoint written to " << a.checkpoint << "\n";
  return 0;
}

int run_evaluate(const EvaluateArgs& a) {
  std::vector<FusionModel> models;
  models.push_back(load_checkpoint(a.checkpoint));
  for (const auto& p : a.ensemble) models.push_back(load_checkpoint(p));
  const Dataset ds = read_dataset(a.data_dir);
  if (ds.split.vocabulary != models.front().vocabulary()) {
    throw std::invalid_argument("dataset vocabulary does not match the checkpoint vocabulary");
  }
  const auto clips = ds.select(split_ids(ds, a.split));
  const auto scores = ensemble_predict(models, clips, a.threads);
  std::vector<ScoredClip> scored;
  scored.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) scored.push_back({clips[i]->clip_id, clips[i]->identity, scores[i]});
  const RetrievalRun run = evaluate_retrieval(scored, ds.split.vocabulary, kRetrievalDepth, a.threads);
  for (int id : run.skipped) {
    std::cerr << "warning: identity " << ds.split.vocabulary[static_cast<std::size_t>(id)]
              << " has no positives in the " << a.split << " split; excluded from MAP\n";
  }
  write_file(a.out, retrieval_run_to_json(run) + "\n");
  const std::string table = retrieval_run_table(run);
  write_file(with_extension(a.out, ".txt"), table);
  if (!a.predictions.empty()) write_file(a.predictions, prediction_dump(scored, ds.split.vocabulary));
  std::cerr << table;
  return 0;
}

int run_ablate(const AblateArgs& a) {
  AblationGrid grid = ablation_grid_from_json(read_file(a.grid));
  if (a.seed) grid.train.seed = *a.seed;
  if (a.threads) grid.train.threads = *a.threads;
  const Dataset ds = read_dataset(a.data_dir);
  const AblationReport report = run_ablation(ds, grid, [](const AblationRowResult& r) {
    std::cerr << r.name << ": MAP " << 100.0 * r.map << "% (" << r.seconds << " s)\n";
  });
  write_file(a.out, ablation_report_to_json(report) + "\n");
  const std::string table = ablation_report_table(report);
  write_file(with_extension(a.out, ".txt"), table);
  std::cerr << table;
  return 0;
}

int run_filter(const FilterArgs& a) {
  const auto clips = parse_annotations(read_file(a.annotations));
  const FilterResult result = apply_filters(clips);
  write_file(a.out, filter_result_to_json(result) + "\n");
  std::size_t kept = 0;
  for (const auto& d : result.clips) kept += d.keep ? 1 : 0;
  std::cerr << "kept " << kept << " of " << result.clips.size() << " clips\n";
  return 0;
}

int run_inspect(const InspectArgs& a) {
  FusionModel model = load_checkpoint(a.checkpoint);
  json params = json::array();
  std::size_t total = 0;
  for (const auto& t : model.state()) {
    double sq = 0.0, abs_sum = 0.0;
    for (double v : t.values) {
      sq += v * v;
      abs_sum += std::abs(v);
    }
    total += t.values.size();
    params.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"l2_norm", std::sqrt(sq)},
                      {"mean_abs", abs_sum / static_cast<double>(t.values.size())}});
  }
  json slots = json::array();
  for (std::size_t s = 0; s < kSlotCount; ++s) slots.push_back(std::string(slot_name(s)));
  json out = {{"config", json::parse(model_config_to_json(model.config()))},
              {"vocabulary_size", model.vocabulary().size()},
              {"gamma", model.params().gamma},
              {"parameter_count", total},
              {"parameters", params},
              {"slot_names", slots}};
  std::cerr << "parameters: " << total << ", gamma " << model.params().gamma << "\n";
  if (!a.data_dir.empty()) {
    const Dataset ds = read_dataset(a.data_dir);
    const auto clips = ds.select(split_ids(ds, a.split));
    const auto inputs = prepare_inputs(clips, model.config(), a.threads);
    const Matrix y = model.average_attention(inputs, a.threads);
    json rows = json::array();
    std::cerr << "average attention Y over " << inputs.size() << " " << a.split
              << " clips (column j: weights feature j gives to each feature)\n";
    for (std::size_t i = 0; i < y.rows(); ++i) {
      rows.push_back(std::vector<double>(y.row(i).begin(), y.row(i).end()));
      char line[128];
      std::snprintf(line, sizeof line, "%-13s %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f\n",
                    std::string(slot_name(i)).c_str(), y(i, 0), y(i, 1), y(i, 2), y(i, 3), y(i, 4), y(i, 5));
      std::cerr << line;
    }
    out["average_attention"] = rows;
    out["attention_clips"] = inputs.size();
  }
  write_file(a.out, out.dump(1) + "\n");
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Multi-modal person identification: synthetic benchmarks, training and MAP@100 evaluation", "mmpid"};
  app.require_subcommand(1, 1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic multi-modal benchmark");
  generate->add_option("config", gen.config, "Generator config (JSON)")->required()->check(CLI::ExistingFile);
  generate->add_option("out_dir", gen.out_dir, "Output dataset directory")->required();
  generate->add_option("--seed", gen.seed, "Override the config seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a fusion model on the train split");
  train_cmd->add_option("data_dir", tr.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("config", tr.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("checkpoint", tr.checkpoint, "Checkpoint path (sidecar written to <path>.json)")->required();
  train_cmd->add_option("--log", tr.log, "Training log path (default <checkpoint>.log.jsonl)");
  train_cmd->add_option("--seed", tr.seed, "Override the config seed");
  train_cmd->add_option("--threads", tr.threads, "Worker threads (0 = all cores)");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Rank clips per identity and report MAP@100");
  evaluate->add_option("checkpoint", ev.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("data_dir", ev.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--ensemble", ev.ensemble, "Additional checkpoints whose probabilities are summed")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--split", ev.split, "Split to evaluate (train, val, test)");
  evaluate->add_option("--out", ev.out, "Retrieval run JSON; a .txt table is written next to it");
  evaluate->add_option("--predictions", ev.predictions, "Per-clip top identities (JSON lines)");
  evaluate->add_option("--threads", ev.threads, "Worker threads (0 = all cores)");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Run the modality/module ablation grid");
  ablate->add_option("data_dir", ab.data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("grid", ab.grid, "Ablation grid (JSON)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ab.out, "Report JSON; a .txt table is written next to it");
  ablate->add_option("--seed", ab.seed, "Override the training seed");
  ablate->add_option("--threads", ab.threads, "Worker threads (0 = all cores)");

  FilterArgs fi;
  auto* filter = app.add_subcommand("filter", "Apply the clip curation rules to detection annotations");
  filter->add_option("annotations", fi.annotations, "Annotations (JSON lines)")->required()->check(CLI::ExistingFile);
  filter->add_option("--out", fi.out, "Decisions JSON");

  InspectArgs in;
  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint and its average attention matrix");
  inspect->add_option("checkpoint", in.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  inspect->add_option("--data", in.data_dir, "Dataset directory for the average attention matrix")
      ->check(CLI::ExistingDirectory);
  inspect->add_option("--split", in.split, "Split used for the attention average");
  inspect->add_option("--out", in.out, "Inspection JSON");
  inspect->add_option("--threads", in.threads, "Worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (generate->parsed()) return run_generate(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (evaluate->parsed()) return run_evaluate(ev);
    if (ablate->parsed()) return run_ablate(ab);
    if (filter->parsed()) return run_filter(fi);
    if (inspect->parsed()) return run_inspect(in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mmpid::cli
