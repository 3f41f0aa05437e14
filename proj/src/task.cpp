#include "demotune/task.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "demotune/error.hpp"

namespace demotune {

using nlohmann::json;

std::string_view to_string(Metric metric) {
  return metric == Metric::Accuracy ? "accuracy" : "binary_f1";
}

Metric metric_from_string(std::string_view name) {
  if (name == "accuracy" || name == "acc") return Metric::Accuracy;
  if (name == "binary_f1" || name == "f1") return Metric::BinaryF1;
  throw Error(ErrorKind::ParseError, "unknown metric '" + std::string(name) + "'");
}

TemplateSpec TaskConfig::continuous_spec(int prompt_length) const {
  if (!continuous_template.empty()) return parse_template(continuous_template, task_id);
  const std::string prompt = "[PROMPT:" + std::to_string(prompt_length) + "]";
  const bool pair = manual_spec().is_pair();
  return parse_template(pair ? "[CLS] {x1} " + prompt + " [MASK] {x2} [SEP]" : "[CLS] {x1} " + prompt + " [MASK] [SEP]",
                        task_id);
}

int TaskConfig::positive_class() const {
  if (positive_label.empty()) return verbalizer.num_classes() - 1;
  return verbalizer.index_of(positive_label);
}

void validate_demo_length(int n, bool allow_any) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "demonstration length n must be >= 1");
  if (!allow_any && n != 1 && n != 2 && n != 3 && n != 5) {
    throw Error(ErrorKind::InvalidArgument, "n=" + std::to_string(n) + " outside {1,2,3,5}; pass allow_any to override");
  }
}

TaskConfig parse_task_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("task config: ") + e.what());
  }
  try {
    TaskConfig cfg;
    cfg.task_id = doc.at("task_id").get<std::string>();
    cfg.template_text = doc.at("template").get<std::string>();
    cfg.continuous_template = doc.value("continuous_template", std::string{});
    std::vector<std::string> labels;
    std::vector<std::string> words;
    // Ordered list of [label, word] pairs keeps the canonical label order.
    for (const auto& entry : doc.at("verbalizer")) {
      labels.push_back(entry.at(0).get<std::string>());
      words.push_back(entry.at(1).get<std::string>());
    }
    cfg.verbalizer = Verbalizer(std::move(labels), std::move(words));
    cfg.n = doc.value("n", 1);
    cfg.metric = metric_from_string(doc.value("metric", std::string("accuracy")));
    cfg.positive_label = doc.value("positive_label", std::string{});
    validate_demo_length(cfg.n, doc.value("allow_any_n", false));
    (void)cfg.manual_spec();
    if (!cfg.positive_label.empty()) (void)cfg.positive_class();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("task config: ") + e.what());
  }
}

TaskConfig load_task_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open task config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_task_config(buf.str());
}

std::string task_config_to_json(const TaskConfig& config) {
  json verbalizer = json::array();
  for (int c = 0; c < config.verbalizer.num_classes(); ++c) {
    verbalizer.push_back({config.verbalizer.labels()[static_cast<std::size_t>(c)], config.verbalizer.words()[static_cast<std::size_t>(c)]});
  }
  json doc = {{"task_id", config.task_id},
              {"template", config.template_text},
              {"verbalizer", verbalizer},
              {"n", config.n},
              {"metric", to_string(config.metric)}};
  if (!config.continuous_template.empty()) doc["continuous_template"] = config.continuous_template;
  if (!config.positive_label.empty()) doc["positive_label"] = config.positive_label;
  return doc.dump();
}

}  // namespace demotune
