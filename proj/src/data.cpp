#include "demotune/data.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_set>

#include "demotune/error.hpp"
#include "demotune/random.hpp"

namespace demotune {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

void finish(Dataset& ds, const TaskConfig& task) {
  std::unordered_set<std::string> seen;
  const bool pair = task.manual_spec().is_pair();
  for (const auto& ex : ds.examples) {
    (void)task.verbalizer.index_of(ex.label);
    if (pair && !ex.text_b) throw Error(ErrorKind::ParseError, "example " + ex.uid + " lacks text_b for a pair task");
    if (!seen.insert(ex.uid).second) throw Error(ErrorKind::ParseError, "duplicate uid " + ex.uid);
  }
}

void fisher_yates(std::vector<LabeledText>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.index(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

std::vector<std::vector<LabeledText>> Dataset::by_class(const Verbalizer& verbalizer) const {
  std::vector<std::vector<LabeledText>> groups(static_cast<std::size_t>(verbalizer.num_classes()));
  for (const auto& ex : examples) groups[static_cast<std::size_t>(verbalizer.index_of(ex.label))].push_back(ex);
  return groups;
}

Dataset parse_jsonl(std::string_view text, const TaskConfig& task) {
  Dataset ds{.task_id = task.task_id, .examples = {}};
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const std::string where = "line " + std::to_string(i + 1);
    json row;
    try {
      row = json::parse(lines[i]);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, where + ": " + e.what());
    }
    if (!row.is_object() || !row.contains("text_a") || !row.contains("label")) {
      throw Error(ErrorKind::ParseError, where + ": need text_a and label");
    }
    LabeledText ex;
    try {
      ex.text_a = row.at("text_a").get<std::string>();
      if (row.contains("text_b") && !row.at("text_b").is_null()) ex.text_b = row.at("text_b").get<std::string>();
      const auto& label = row.at("label");
      ex.label = label.is_string() ? label.get<std::string>() : label.dump();
      if (row.contains("uid")) {
        const auto& uid = row.at("uid");
        ex.uid = uid.is_string() ? uid.get<std::string>() : uid.dump();
      } else {
        ex.uid = task.task_id + "-" + std::to_string(i + 1);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, where + ": " + e.what());
    }
    try {
      (void)task.verbalizer.index_of(ex.label);
    } catch (const Error&) {
      throw Error(ErrorKind::UnknownLabel, where + ": label '" + ex.label + "' not in task " + task.task_id);
    }
    ds.examples.push_back(std::move(ex));
  }
  finish(ds, task);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const TaskConfig& task) {
  const auto text = read_file(path);
  if (path.extension() == ".tsv") return parse_tsv(text, task);
  return parse_jsonl(text, task);
}

Dataset parse_tsv(std::string_view text, const TaskConfig& task) {
  Dataset ds{.task_id = task.task_id, .examples = {}};
  const bool pair = task.manual_spec().is_pair();
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    std::vector<std::string> cols;
    std::string_view rest = lines[i];
    while (true) {
      const auto tab = rest.find('\t');
      cols.emplace_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    const std::size_t expected = pair ? 3 : 2;
    if (cols.size() != expected) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(i + 1) + ": expected " + std::to_string(expected) + " columns");
    }
    LabeledText ex{.text_a = cols[0], .text_b = std::nullopt, .label = cols.back(), .uid = task.task_id + "-" + std::to_string(i + 1)};
    if (pair) ex.text_b = cols[1];
    try {
      (void)task.verbalizer.index_of(ex.label);
    } catch (const Error&) {
      throw Error(ErrorKind::UnknownLabel, "line " + std::to_string(i + 1) + ": label '" + ex.label + "'");
    }
    ds.examples.push_back(std::move(ex));
  }
  finish(ds, task);
  return ds;
}

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& ex : dataset.examples) {
    json row = {{"uid", ex.uid}, {"text_a", ex.text_a}, {"label", ex.label}};
    row["text_b"] = ex.text_b ? json(*ex.text_b) : json(nullptr);
    out += row.dump();
    out.push_back('\n');
  }
  return out;
}

FewShotSplit sample_kshot(const Dataset& dataset, const Verbalizer& verbalizer, int k, std::uint64_t seed) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "K must be >= 1");
  auto groups = dataset.by_class(verbalizer);
  FewShotSplit split{.train = {}, .dev = {}, .k = k, .seed = seed, .task_id = dataset.task_id};
  Rng rng(seed);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& group = groups[c];
    if (group.size() < 2 * static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::InsufficientExamples, "class '" + verbalizer.labels()[c] + "' has " + std::to_string(group.size()) +
                                                       " examples, needs " + std::to_string(2 * k));
    }
    fisher_yates(group, rng);
    split.train.insert(split.train.end(), group.begin(), group.begin() + k);
    split.dev.insert(split.dev.end(), group.begin() + k, group.begin() + 2 * k);
  }
  return split;
}

std::vector<FewShotSplit> make_seed_suite(const Dataset& dataset, const Verbalizer& verbalizer, int k,
                                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidArgument, "seed suite needs at least one seed");
  std::vector<FewShotSplit> out;
  out.reserve(seeds.size());
  for (auto seed : seeds) out.push_back(sample_kshot(dataset, verbalizer, k, seed));
  return out;
}

std::string split_manifest_json(const FewShotSplit& split) {
  json train = json::array();
  json dev = json::array();
  for (const auto& ex : split.train) train.push_back(ex.uid);
  for (const auto& ex : split.dev) dev.push_back(ex.uid);
  json doc = {{"task_id", split.task_id}, {"k", split.k}, {"seed", split.seed}, {"train", train}, {"dev", dev}};
  return doc.dump(2) + "\n";
}

namespace {

const std::vector<std::string> kPositiveWords = {"wonderful", "brilliant", "delightful", "superb", "charming", "moving"};
const std::vector<std::string> kNegativeWords = {"awful", "boring", "dreadful", "tedious", "clumsy", "bland"};
const std::vector<std::string> kNouns = {"movie", "film",   "story",  "script",      "cast",
                                         "plot",  "ending", "acting", "performance", "direction"};
const std::vector<std::string> kFillers = {"really", "truly", "quite", "simply", "honestly", "overall"};

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[rng.index(items.size())];
}

}  // namespace

Dataset make_synthetic_sentiment(int per_class, std::uint64_t seed, const std::string& task_id) {
  Rng rng(seed);
  Dataset ds{.task_id = task_id, .examples = {}};
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < 2; ++c) {
      const auto& words = c == 0 ? kNegativeWords : kPositiveWords;
      std::string text = "the " + pick(kNouns, rng) + " was " + pick(kFillers, rng) + " " + pick(words, rng);
      if (rng.uniform() < 0.5) text += " and " + pick(words, rng);
      if (rng.uniform() < 0.5) text += " , the " + pick(kNouns, rng) + " felt " + pick(words, rng);
      ds.examples.push_back({.text_a = text,
                             .text_b = std::nullopt,
                             .label = c == 0 ? "negative" : "positive",
                             .uid = task_id + "-" + std::to_string(seed) + "-" + std::to_string(2 * i + c)});
    }
  }
  return ds;
}

TaskConfig synthetic_sentiment_task() {
  TaskConfig task;
  task.task_id = "synth_sentiment";
  task.template_text = "[CLS] {x1} , It was [MASK] . [SEP]";
  task.verbalizer = Verbalizer({"negative", "positive"}, {"terrible", "great"});
  task.n = 1;
  task.metric = Metric::Accuracy;
  return task;
}

Dataset make_synthetic_multiclass(int num_classes, int per_class, int length, std::uint64_t seed, const std::string& task_id) {
  Rng rng(seed);
  Dataset ds{.task_id = task_id, .examples = {}};
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c) {
      std::string text;
      for (int t = 0; t < length; ++t) {
        if (!text.empty()) text.push_back(' ');
        text += "topic" + std::to_string(c) + "w" + std::to_string(rng.index(8));
      }
      ds.examples.push_back({.text_a = text,
                             .text_b = std::nullopt,
                             .label = "class" + std::to_string(c),
                             .uid = task_id + "-" + std::to_string(seed) + "-" + std::to_string(i * num_classes + c)});
    }
  }
  return ds;
}

TaskConfig synthetic_multiclass_task(int num_classes) {
  std::vector<std::string> labels;
  std::vector<std::string> words;
  for (int c = 0; c < num_classes; ++c) {
    labels.push_back("class" + std::to_string(c));
    words.push_back("labelword" + std::to_string(c));
  }
  TaskConfig task;
  task.task_id = "synth_multiclass";
  task.template_text = "[CLS] {x1} , It was [MASK] . [SEP]";
  task.verbalizer = Verbalizer(std::move(labels), std::move(words));
  task.n = 1;
  return task;
}

}  // namespace demotune
