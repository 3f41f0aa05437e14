#include "demotune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>

#include "demotune/error.hpp"

namespace demotune {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written little-endian");

namespace {

json example_json(const LabeledText& ex) {
  json row = {{"uid", ex.uid}, {"text_a", ex.text_a}, {"label", ex.label}};
  row["text_b"] = ex.text_b ? json(*ex.text_b) : json(nullptr);
  return row;
}

LabeledText example_from(const json& row) {
  LabeledText ex{.text_a = row.at("text_a").get<std::string>(), .text_b = std::nullopt,
                 .label = row.at("label").get<std::string>(), .uid = row.at("uid").get<std::string>()};
  if (!row.at("text_b").is_null()) ex.text_b = row.at("text_b").get<std::string>();
  return ex;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  const auto params = model.all_parameters();
  json tensors = json::array();
  for (const auto& p : params) tensors.push_back({{"name", p.name}, {"rows", p.var.rows()}, {"cols", p.var.cols()}});
  json pools = json::array();
  for (const auto& pool : model.demo_pools) {
    json items = json::array();
    for (const auto& ex : pool) items.push_back(example_json(ex));
    pools.push_back(items);
  }
  const json header = {{"format", "demotune-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"task", json::parse(task_config_to_json(model.task))},
                       {"train_config", json::parse(train_config_to_json(model.config))},
                       {"vocab", model.encoder->vocab().tokens()},
                       {"demo_pools", pools},
                       {"tensors", tensors}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    const auto& m = p.var.value();
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::CheckpointMismatch, path.string() + " is not a demotune checkpoint");
  }
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || length > (1ULL << 32)) throw Error(ErrorKind::CheckpointMismatch, "corrupt checkpoint header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorKind::CheckpointMismatch, "truncated checkpoint header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CheckpointMismatch, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorKind::CheckpointMismatch, "unsupported checkpoint version " + header.value("version", json(0)).dump());
  }
  const auto task = parse_task_config(header.at("task").dump());
  const auto config = train_config_from_json(header.at("train_config").dump());
  auto vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());

  FewShotSplit split;
  for (const auto& pool : header.at("demo_pools")) {
    for (const auto& row : pool) split.train.push_back(example_from(row));
  }
  auto model = init_model(task, config, std::move(vocab), split, 0);
  // Mean-virtual banks are rebuilt from pools at init; stored values override them below.

  std::map<std::string, ag::Var> by_name;
  for (auto& p : model.all_parameters()) by_name.emplace(p.name, p.var);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != by_name.size()) {
    throw Error(ErrorKind::CheckpointMismatch, "checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                                                   std::to_string(by_name.size()));
  }
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorKind::CheckpointMismatch, "unexpected tensor " + name);
    auto var = it->second;
    const auto rows = t.at("rows").get<ag::Index>();
    const auto cols = t.at("cols").get<ag::Index>();
    if (rows != var.rows() || cols != var.cols()) {
      throw Error(ErrorKind::CheckpointMismatch, "shape mismatch for " + name);
    }
    auto& m = var.mutable_value();
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::CheckpointMismatch, "truncated payload for " + name);
  }
  return model;
}

}  // namespace demotune
