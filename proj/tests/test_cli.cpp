#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using mmpid::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "mmpid");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return mmpid::cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kTinyGen =
    R"({"num_identities":4,"clips_per_identity":12,"distractor_fraction":0.1,"seed":5,
        "modalities":{"face":{"dim":8},"head":{"dim":8},"body":{"dim":8},"audio":{"dim":8}}})";
const char* kTinyTrain =
    R"({"epochs":3,"batch_size":8,"threads":1,
        "model":{"feature_dim":8,"attention_dim":4,"netvlad_clusters":2,"frames_per_clip":4}})";

}  // namespace

TEST_CASE("generate, train, evaluate and inspect round trip through the CLI") {
  TempDir dir("cli");
  const fs::path gen = dir.path() / "gen.json", cfg = dir.path() / "train.json", data = dir.path() / "data";
  const fs::path ckpt = dir.path() / "model.ckpt";
  write(gen, kTinyGen);
  write(cfg, kTinyTrain);

  REQUIRE(run({"generate", gen.string(), data.string()}) == 0);
  CHECK(fs::exists(data / "dataset.json"));
  CHECK(fs::exists(data / "manifest.jsonl"));

  REQUIRE(run({"train", data.string(), cfg.string(), ckpt.string(), "--seed", "3"}) == 0);
  CHECK(fs::exists(ckpt));
  const std::string log = slurp(ckpt.string() + ".log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(nlohmann::json::parse(log.substr(0, log.find('\n'))).contains("loss"));

  const fs::path out = dir.path() / "run.json", preds = dir.path() / "preds.jsonl";
  REQUIRE(run({"evaluate", ckpt.string(), data.string(), "--out", out.string(), "--predictions", preds.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j.at("map").get<double>() >= 0.0);
  CHECK(j.at("map").get<double>() <= 1.0);
  CHECK(fs::exists(dir.path() / "run.txt"));
  CHECK_FALSE(slurp(preds).empty());

  const fs::path out2 = dir.path() / "run2.json";
  REQUIRE(run({"evaluate", ckpt.string(), data.string(), "--ensemble", ckpt.string(), "--out", out2.string(),
               "--split", "val"}) == 0);
  CHECK(nlohmann::json::parse(slurp(out2)).contains("map"));

  const fs::path insp = dir.path() / "inspect.json";
  REQUIRE(run({"inspect", ckpt.string(), "--data", data.string(), "--out", insp.string()}) == 0);
  const auto ij = nlohmann::json::parse(slurp(insp));
  CHECK(ij.at("average_attention").size() == 6);
  CHECK(ij.at("parameter_count").get<int>() > 0);

  CHECK(run({"evaluate", ckpt.string(), data.string(), "--split", "nope", "--out", out.string()}) == 1);
}

TEST_CASE("ablate runs a user grid") {
  TempDir dir("cli_ablate");
  const fs::path gen = dir.path() / "gen.json", grid = dir.path() / "grid.json", data = dir.path() / "data";
  write(gen, kTinyGen);
  write(grid, std::string(R"({"train":)") + kTinyTrain +
                  R"(,"rows":[{"name":"Face","modalities":["face"]},
                              {"name":"Face+Head","modalities":["face","head"],"netvlad":true,"mma":true}]})");
  REQUIRE(run({"generate", gen.string(), data.string()}) == 0);
  const fs::path out = dir.path() / "abl.json";
  REQUIRE(run({"ablate", data.string(), grid.string(), "--out", out.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  REQUIRE(j.at("rows").size() == 2);
  CHECK(j.at("rows").at(1).at("name").get<std::string>() == "Face+Head");
  CHECK(fs::exists(dir.path() / "abl.txt"));
}

TEST_CASE("filter writes keep/drop decisions") {
  TempDir dir("cli_filter");
  const fs::path ann = dir.path() / "ann.jsonl", out = dir.path() / "decisions.json";
  write(ann, R"({"clip_id":"a","duration_s":2,"frames":[{"head_areas":[5]}]})"
             "\n"
             R"({"clip_id":"b","duration_s":0.5,"frames":[{"head_areas":[5]}]})"
             "\n");
  REQUIRE(run({"filter", ann.string(), "--out", out.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j.at("summary").at("kept").get<int>() == 1);

  write(ann, "{broken\n");
  CHECK(run({"filter", ann.string(), "--out", out.string()}) == 1);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(run({}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"train"}) == 2);
  CHECK(run({"generate", "/nonexistent/config.json", "/tmp/x"}) == 2);
}
