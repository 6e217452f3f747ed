#include "mmpid/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mmpid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'M', 'P', 'I', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
    return out;
  }
}

template <typename U>
void put(std::ostream& os, U v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return byteswap_if_big(v);
}

json report_to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"step", e.step}, {"loss", e.loss}, {"accuracy", e.accuracy},
                      {"learning_rate", e.learning_rate}});
  }
  return {{"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"final_accuracy", r.final_accuracy},
          {"steps", r.steps}, {"epochs", epochs}};
}

}  // namespace

fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(FusionModel& model, const fs::path& path, const std::optional<TrainReport>& report) {
  auto state = model.state();
  std::uint64_t total = 0;
  json tensors = json::array();
  for (const auto& t : state) {
    total += t.values.size();
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(state.size()));
    put<std::uint64_t>(out, total);
    for (const auto& t : state)
      for (double v : t.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  json side = {{"format_version", kVersion},
               {"model", json::parse(model_config_to_json(model.config()))},
               {"vocabulary", model.vocabulary()},
               {"seed", model.seed()},
               {"netvlad_batches_seen", model.netvlad_batches_seen()},
               {"tensors", tensors}};
  if (report) side["report"] = report_to_json(*report);
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + sidecar_path(path).string());
  out << side.dump(1) << '\n';
}

FusionModel load_checkpoint(const fs::path& path) {
  json side;
  {
    std::ifstream in(sidecar_path(path));
    if (!in) throw CheckpointError("missing checkpoint sidecar " + sidecar_path(path).string());
    try {
      side = json::parse(in);
    } catch (const json::exception& e) {
      throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
    }
  }
  FusionModel model;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> shapes;
  try {
    if (side.at("format_version").get<std::uint32_t>() != kVersion) {
      throw CheckpointError(sidecar_path(path).string() + ": unsupported format_version");
    }
    model = FusionModel(model_config_from_json(side.at("model").dump()),
                        side.at("vocabulary").get<std::vector<std::string>>(), side.at("seed").get<std::uint64_t>());
    model.set_netvlad_batches_seen(side.at("netvlad_batches_seen").get<std::size_t>());
    for (const auto& t : side.at("tensors")) {
      shapes.push_back({t.at("name").get<std::string>(),
                        {t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>()}});
    }
  } catch (const json::exception& e) {
    throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
  }

  auto state = model.state();
  if (state.size() != shapes.size()) throw CheckpointError(path.string() + ": tensor list does not match model config");
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i].name != shapes[i].first || state[i].rows != shapes[i].second.first ||
        state[i].cols != shapes[i].second.second) {
      throw CheckpointError(path.string() + ": tensor " + shapes[i].first + " does not match model layout");
    }
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(path.string() + ": bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw CheckpointError(path.string() + ": unsupported version");
  if (get<std::uint32_t>(in) != state.size()) throw CheckpointError(path.string() + ": tensor count mismatch");
  std::uint64_t expected = 0;
  for (const auto& t : state) expected += t.values.size();
  if (get<std::uint64_t>(in) != expected) throw CheckpointError(path.string() + ": value count mismatch");
  for (auto& t : state)
    for (double& v : t.values) v = std::bit_cast<double>(get<std::uint64_t>(in));
  if (!in) throw CheckpointError(path.string() + ": truncated checkpoint");
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  return model;
}

}  // namespace mmpid
