#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "demotune/vocab.hpp"

namespace demotune {

struct LabeledText {
  std::string text_a;
  std::optional<std::string> text_b;
  std::string label;
  std::string uid;
};

// ---------------------------------------------------------------------------
// Template DSL
//
//   [CLS] [SEP] [MASK]   specials ([MASK] must appear exactly once)
//   {x1} {x2}            input slots
//   [PROMPT:m]           m continuous pseudo-tokens
//   [VDEMO]              where demonstration blocks expand (default: end)
//
// Everything else is literal text, tokenized at render time.
// ---------------------------------------------------------------------------

struct Literal {
  std::string text;
  bool operator==(const Literal&) const = default;
};
struct InputSlot {
  int which = 1;  // 1 -> text_a, 2 -> text_b
  bool operator==(const InputSlot&) const = default;
};
struct MaskSlot {
  bool operator==(const MaskSlot&) const = default;
};
struct PromptSlot {
  int length = 0;
  bool operator==(const PromptSlot&) const = default;
};
struct DemoPoint {
  bool operator==(const DemoPoint&) const = default;
};
struct VirtualDemoSlot {
  int class_index = 0;
  int length = 1;
  bool operator==(const VirtualDemoSlot&) const = default;
};
struct RealDemoSlot {
  int class_index = 0;
  LabeledText demo;
  bool operator==(const RealDemoSlot& o) const { return class_index == o.class_index && demo.uid == o.demo.uid; }
};

using Segment = std::variant<Literal, InputSlot, MaskSlot, PromptSlot, DemoPoint, VirtualDemoSlot, RealDemoSlot>;

struct TemplateSpec {
  std::vector<Segment> segments;
  std::string task_id;

  bool is_pair() const;
  int prompt_length() const;
};

TemplateSpec parse_template(std::string_view dsl, std::string task_id = {});

// Inverse of parse_template up to whitespace: segments joined by single spaces.
std::string format_template(const TemplateSpec& spec);

class Verbalizer {
 public:
  Verbalizer() = default;
  Verbalizer(std::vector<std::string> labels, std::vector<std::string> words);

  int num_classes() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& words() const { return words_; }

  int index_of(std::string_view label) const;  // throws UnknownLabel
  const std::string& word_for(std::string_view label) const { return words_[static_cast<std::size_t>(index_of(label))]; }

  // One id per class; each word must be exactly one in-vocabulary token.
  std::vector<int> token_ids(const Vocab& vocab) const;

 private:
  std::vector<std::string> labels_;
  std::vector<std::string> words_;
};

enum class BlockKind { None, Virtual, Real };

struct BlockSpan {
  int begin = -1;  // inclusive token index
  int end = -1;    // exclusive, covers the trailing [SEP]
};

struct TokenPlan {
  std::vector<int> token_ids;
  int cls_pos = 0;
  int mask_pos = -1;
  std::vector<int> prompt_positions;
  std::vector<std::vector<int>> virtual_positions;  // per class, empty unless virtual
  std::vector<BlockKind> block_kinds;               // per class
  std::vector<BlockSpan> block_spans;               // per class
  int attention_length = 0;
  int truncated_tokens = 0;

  bool has_mask() const { return mask_pos >= 0; }
  std::vector<int> all_virtual_positions() const;
};

enum class Placement { After, Before };

struct RenderOptions {
  int max_length = 128;
  bool truncate_inputs = false;  // tail-truncate anchor x1/x2 before raising OverLength
  Placement placement = Placement::After;
};

// T(x): the cloze template with its mask.
TokenPlan render_anchor(const TemplateSpec& spec, const LabeledText& example, const Vocab& vocab,
                        const RenderOptions& opts = {});

// T(x, y): mask replaced by the label word; no mask remains.
TokenPlan render_demonstration(const TemplateSpec& spec, const LabeledText& demo, const Verbalizer& verbalizer,
                               const Vocab& vocab, const RenderOptions& opts = {});

// T*(x): anchor followed by one real demonstration per class in label order.
TokenPlan build_demo_augmented(const TemplateSpec& spec, const LabeledText& example,
                               const std::vector<LabeledText>& demos, const Verbalizer& verbalizer,
                               const Vocab& vocab, const RenderOptions& opts = {});

// T~(x): anchor followed by n virtual positions per class.
TokenPlan build_virtual(const TemplateSpec& spec, const LabeledText& example, int n, const Verbalizer& verbalizer,
                        const Vocab& vocab, const RenderOptions& opts = {});

// T~+(x): T~(x) with the replaced class's virtual block swapped for a real demonstration.
TokenPlan build_positive(const TemplateSpec& spec, const LabeledText& example, const LabeledText& demo,
                         int replaced_class, int n, const Verbalizer& verbalizer, const Vocab& vocab,
                         const RenderOptions& opts = {});

// "[CLS] x1 [SEP] (x2 [SEP])" for the standard fine-tuning baseline.
TokenPlan render_plain(const LabeledText& example, const Vocab& vocab, const RenderOptions& opts = {});

// Text the plan would tokenize from, before tokenization; used for golden files.
std::string render_text(const TemplateSpec& spec, const LabeledText& example,
                        const std::optional<std::string>& label_word = std::nullopt);

// Inserts demonstration slots at the [VDEMO] point, or per placement when absent.
TemplateSpec expand_demonstrations(const TemplateSpec& spec, std::vector<Segment> blocks, Placement placement);

}  // namespace demotune
