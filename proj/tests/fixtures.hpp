#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "demotune/data.hpp"
#include "demotune/random.hpp"
#include "demotune/task.hpp"
#include "demotune/template.hpp"
#include "demotune/vocab.hpp"

namespace fixtures {

inline const std::vector<std::string> kTaskNames = {"sst2", "sst5", "mr",   "cr",  "mpqa", "subj", "trec", "dbpedia",
                                                    "yahoo", "mnli", "snli", "qnli", "rte", "mrpc", "qqp"};

inline std::uint64_t fnv1a_seed(const std::string& name) { return demotune::fnv1a(name); }

inline demotune::TaskConfig load_task(const std::string& name) {
  return demotune::load_task_config(std::filesystem::path(DEMOTUNE_CONFIG_DIR) / (name + ".json"));
}

inline const std::vector<std::string>& word_list() {
  static const std::vector<std::string> words = {"alpha", "bravo", "delta", "echo",  "golf",  "hotel", "india",
                                                 "kilo",  "lima",  "mike",  "oscar", "papa",  "romeo", "tango",
                                                 "uniform", "victor", "whiskey", "yankee", "zulu", ",", "."};
  return words;
}

inline std::string random_text(demotune::Rng& rng, int min_words, int max_words) {
  const auto& words = word_list();
  const int length = min_words + static_cast<int>(rng.index(static_cast<std::size_t>(max_words - min_words + 1)));
  std::string text;
  for (int i = 0; i < length; ++i) {
    if (i > 0) text.push_back(' ');
    text += words[rng.index(words.size())];
  }
  return text;
}

inline demotune::LabeledText random_example(demotune::Rng& rng, const demotune::TaskConfig& task, int max_words,
                                            const std::string& uid) {
  demotune::LabeledText ex;
  ex.text_a = random_text(rng, 1, max_words);
  if (task.manual_spec().is_pair()) ex.text_b = random_text(rng, 1, max_words);
  const auto& labels = task.verbalizer.labels();
  ex.label = labels[rng.index(labels.size())];
  ex.uid = uid;
  return ex;
}

// Vocabulary covering the random word list, template literals and label words.
inline demotune::Vocab vocab_for(const demotune::TaskConfig& task) {
  std::vector<std::string> texts = word_list();
  texts.push_back(task.template_text);
  for (const auto& w : task.verbalizer.words()) texts.push_back(w);
  return demotune::Vocab::build(texts);
}

// Golden rows keyed by (task, view).
inline std::map<std::pair<std::string, std::string>, std::string> load_goldens() {
  std::ifstream in(std::filesystem::path(DEMOTUNE_GOLDEN_DIR) / "templates.tsv");
  std::map<std::pair<std::string, std::string>, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) continue;
    out[{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1)}] = line.substr(t2 + 1);
  }
  return out;
}

inline demotune::LabeledText golden_example(const demotune::TaskConfig& task) {
  if (task.manual_spec().is_pair()) {
    return {.text_a = "the cat sat on the mat", .text_b = "a cat was sitting", .label = task.verbalizer.labels()[0], .uid = "g"};
  }
  return {.text_a = "a gripping , funny film", .text_b = std::nullopt, .label = task.verbalizer.labels()[0], .uid = "g"};
}

// Expected T~+ ids built from T~ without the library's block bookkeeping:
// the c-th run of virtual placeholders is swapped for the demonstration's
// tokens with [CLS]/[SEP] removed (the run's trailing [SEP] is kept).
inline std::vector<int> expected_positive(const std::vector<int>& virtual_ids, const std::vector<int>& demo_ids, int c) {
  std::vector<int> body;
  for (int id : demo_ids) {
    if (id != demotune::Vocab::kCls && id != demotune::Vocab::kSep) body.push_back(id);
  }
  std::vector<int> out;
  int run = -1;
  for (std::size_t i = 0; i < virtual_ids.size(); ++i) {
    const bool is_v = virtual_ids[i] == demotune::Vocab::kVirtual;
    const bool starts = is_v && (i == 0 || virtual_ids[i - 1] != demotune::Vocab::kVirtual);
    if (starts) ++run;
    if (is_v && run == c) {
      if (starts) out.insert(out.end(), body.begin(), body.end());
      continue;
    }
    out.push_back(virtual_ids[i]);
  }
  return out;
}

// Tokens of the demonstration rendering (mask resolved) through the vocabulary.
inline std::vector<int> demo_tokens(const demotune::TemplateSpec& spec, const demotune::LabeledText& demo,
                                    const demotune::Verbalizer& verbalizer, const demotune::Vocab& vocab) {
  return vocab.tokenize(demotune::render_text(spec, demo, verbalizer.word_for(demo.label)));
}

}  // namespace fixtures
