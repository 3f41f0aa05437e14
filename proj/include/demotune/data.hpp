#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "demotune/task.hpp"
#include "demotune/template.hpp"

namespace demotune {

struct Dataset {
  std::string task_id;
  std::vector<LabeledText> examples;

  // Examples grouped by class index in verbalizer label order.
  std::vector<std::vector<LabeledText>> by_class(const Verbalizer& verbalizer) const;
};

// One JSON object per line: {"text_a": ..., "text_b": ...|null, "label": ..., "uid"?: ...}.
// Missing uids become "<task>-<line>".
Dataset parse_jsonl(std::string_view text, const TaskConfig& task);
Dataset load_dataset(const std::filesystem::path& path, const TaskConfig& task);
// Tab-separated text_a[\ttext_b]\tlabel rows; header lines are not skipped.
Dataset parse_tsv(std::string_view text, const TaskConfig& task);
std::string to_jsonl(const Dataset& dataset);

struct FewShotSplit {
  std::vector<LabeledText> train;
  std::vector<LabeledText> dev;
  int k = 0;
  std::uint64_t seed = 0;
  std::string task_id;
};

inline const std::vector<std::uint64_t> kDefaultSeeds = {13, 21, 42, 87, 100};

// Per class (label order) a seeded Fisher-Yates shuffle; the first K go to
// train and the next K to dev.
FewShotSplit sample_kshot(const Dataset& dataset, const Verbalizer& verbalizer, int k, std::uint64_t seed);
std::vector<FewShotSplit> make_seed_suite(const Dataset& dataset, const Verbalizer& verbalizer, int k,
                                          const std::vector<std::uint64_t>& seeds);

// {"task_id", "k", "seed", "train": [uids], "dev": [uids]}
std::string split_manifest_json(const FewShotSplit& split);

// Balanced binary sentiment corpus: every sentence carries polarity words of
// its class only, so the task is linearly separable on bag-of-words.
Dataset make_synthetic_sentiment(int per_class, std::uint64_t seed, const std::string& task_id = "synth_sentiment");
// |labels| classes, each sentence of `length` tokens drawn from a class-specific word pool.
Dataset make_synthetic_multiclass(int num_classes, int per_class, int length, std::uint64_t seed,
                                  const std::string& task_id = "synth_multiclass");
TaskConfig synthetic_sentiment_task();
TaskConfig synthetic_multiclass_task(int num_classes);

}  // namespace demotune
