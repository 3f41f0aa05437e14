#pragma once

#include <filesystem>
#include <string>

#include "demotune/template.hpp"

namespace demotune {

enum class Metric { Accuracy, BinaryF1 };

std::string_view to_string(Metric metric);
Metric metric_from_string(std::string_view name);

// Per-task settings loaded from configs/tasks/<task>.json.
struct TaskConfig {
  std::string task_id;
  std::string template_text;
  std::string continuous_template;  // P-tuning-style variant; derived when empty
  Verbalizer verbalizer;
  int n = 1;
  Metric metric = Metric::Accuracy;
  std::string positive_label;  // binary F1 positive class; defaults to the last label

  TemplateSpec manual_spec() const { return parse_template(template_text, task_id); }
  TemplateSpec continuous_spec(int prompt_length = 4) const;
  int positive_class() const;
};

TaskConfig parse_task_config(std::string_view json_text);
TaskConfig load_task_config(const std::filesystem::path& path);
std::string task_config_to_json(const TaskConfig& config);

// Values {1,2,3,5} are accepted by default; other positive lengths need allow_any.
void validate_demo_length(int n, bool allow_any = false);

}  // namespace demotune
