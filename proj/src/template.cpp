#include "demotune/template.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "demotune/error.hpp"

namespace demotune {

namespace {

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

bool is_demo_segment(const Segment& s) {
  return std::holds_alternative<VirtualDemoSlot>(s) || std::holds_alternative<RealDemoSlot>(s);
}

TemplateSpec base_of(const TemplateSpec& spec) {
  TemplateSpec base{.segments = {}, .task_id = spec.task_id};
  for (const auto& s : spec.segments) {
    if (!is_demo_segment(s)) base.segments.push_back(s);
  }
  return base;
}

int label_word_id(const Verbalizer& verbalizer, std::string_view label, const Vocab& vocab) {
  const auto& word = verbalizer.word_for(label);
  const auto toks = Vocab::split(word);
  if (toks.size() != 1 || !vocab.contains(toks.front())) {
    throw Error(ErrorKind::UnknownLabel, "label word '" + word + "' is not a single vocabulary token");
  }
  return vocab.id(toks.front());
}

// User text never produces special ids.
std::vector<int> tokenize_input(std::string_view text, const Vocab& vocab) {
  auto ids = vocab.tokenize(text);
  for (int& id : ids) {
    if (vocab.is_special(id)) id = Vocab::kUnk;
  }
  return ids;
}

enum class PieceKind { Fixed, Input, Prompt, Block };

struct Piece {
  PieceKind kind = PieceKind::Fixed;
  std::vector<int> tokens;
  int class_index = -1;
  BlockKind block = BlockKind::None;
  std::vector<int> prompt_offsets;  // offsets of [P] tokens within this piece
};

struct RenderInputs {
  const LabeledText* example = nullptr;
  std::optional<int> mask_word;  // set when rendering a demonstration
};

std::vector<Piece> render_pieces(const TemplateSpec& spec, const RenderInputs& in, const Verbalizer* verbalizer,
                                 const Vocab& vocab);

// Demonstration body: template with mask resolved, specials stripped, one [SEP] appended.
Piece render_real_block(const TemplateSpec& base, const RealDemoSlot& slot, const Verbalizer& verbalizer,
                        const Vocab& vocab) {
  RenderInputs in{.example = &slot.demo, .mask_word = label_word_id(verbalizer, slot.demo.label, vocab)};
  Piece block{.kind = PieceKind::Block, .tokens = {}, .class_index = slot.class_index, .block = BlockKind::Real};
  for (const auto& piece : render_pieces(base, in, &verbalizer, vocab)) {
    for (std::size_t i = 0; i < piece.tokens.size(); ++i) {
      const int id = piece.tokens[i];
      if (piece.kind != PieceKind::Input && (id == Vocab::kCls || id == Vocab::kSep)) continue;
      if (piece.kind == PieceKind::Prompt) block.prompt_offsets.push_back(static_cast<int>(block.tokens.size()));
      block.tokens.push_back(id);
    }
  }
  block.tokens.push_back(Vocab::kSep);
  return block;
}

std::vector<Piece> render_pieces(const TemplateSpec& spec, const RenderInputs& in, const Verbalizer* verbalizer,
                                 const Vocab& vocab) {
  std::vector<Piece> pieces;
  const TemplateSpec base = base_of(spec);
  for (const auto& seg : spec.segments) {
    std::visit(Overloaded{
                   [&](const Literal& lit) { pieces.push_back({.kind = PieceKind::Fixed, .tokens = vocab.tokenize(lit.text)}); },
                   [&](const InputSlot& slot) {
                     const std::string* text = &in.example->text_a;
                     if (slot.which == 2) {
                       if (!in.example->text_b) {
                         throw Error(ErrorKind::InvalidArgument, "template needs {x2} but example '" + in.example->uid + "' has no text_b");
                       }
                       text = &*in.example->text_b;
                     }
                     Piece p{.kind = PieceKind::Input, .tokens = tokenize_input(*text, vocab)};
                     p.class_index = slot.which;
                     pieces.push_back(std::move(p));
                   },
                   [&](const MaskSlot&) {
                     pieces.push_back({.kind = PieceKind::Fixed, .tokens = {in.mask_word.value_or(Vocab::kMask)}});
                   },
                   [&](const PromptSlot& slot) {
                     Piece p{.kind = PieceKind::Prompt, .tokens = std::vector<int>(static_cast<std::size_t>(slot.length), Vocab::kPrompt)};
                     for (int i = 0; i < slot.length; ++i) p.prompt_offsets.push_back(i);
                     pieces.push_back(std::move(p));
                   },
                   [&](const DemoPoint&) {},
                   [&](const VirtualDemoSlot& slot) {
                     Piece p{.kind = PieceKind::Block, .tokens = std::vector<int>(static_cast<std::size_t>(slot.length), Vocab::kVirtual),
                             .class_index = slot.class_index, .block = BlockKind::Virtual};
                     p.tokens.push_back(Vocab::kSep);
                     pieces.push_back(std::move(p));
                   },
                   [&](const RealDemoSlot& slot) {
                     if (verbalizer == nullptr) throw Error(ErrorKind::InvalidArgument, "real demonstration without verbalizer");
                     pieces.push_back(render_real_block(base, slot, *verbalizer, vocab));
                   },
               },
               seg);
  }
  return pieces;
}

// Longest-first tail truncation of input pieces; returns tokens removed.
int truncate_inputs(std::vector<Piece>& pieces, int overflow) {
  int removed = 0;
  while (removed < overflow) {
    Piece* longest = nullptr;
    for (auto& p : pieces) {
      if (p.kind == PieceKind::Input && !p.tokens.empty() && (longest == nullptr || p.tokens.size() > longest->tokens.size())) {
        longest = &p;
      }
    }
    if (longest == nullptr) break;
    longest->tokens.pop_back();
    ++removed;
  }
  return removed;
}

TokenPlan assemble(std::vector<Piece> pieces, int num_classes, const RenderOptions& opts) {
  int total = 0;
  for (const auto& p : pieces) total += static_cast<int>(p.tokens.size());
  int truncated = 0;
  if (total > opts.max_length && opts.truncate_inputs) {
    truncated = truncate_inputs(pieces, total - opts.max_length);
    total -= truncated;
  }
  if (total > opts.max_length) {
    throw Error(ErrorKind::OverLength,
                "plan needs " + std::to_string(total) + " tokens, max length is " + std::to_string(opts.max_length));
  }

  TokenPlan plan;
  plan.truncated_tokens = truncated;
  plan.token_ids.reserve(static_cast<std::size_t>(total));
  plan.virtual_positions.assign(static_cast<std::size_t>(num_classes), {});
  plan.block_kinds.assign(static_cast<std::size_t>(num_classes), BlockKind::None);
  plan.block_spans.assign(static_cast<std::size_t>(num_classes), BlockSpan{});
  int cls_pos = -1;
  int masks = 0;
  for (const auto& p : pieces) {
    const int start = static_cast<int>(plan.token_ids.size());
    for (int off : p.prompt_offsets) plan.prompt_positions.push_back(start + off);
    if (p.kind == PieceKind::Block) {
      const auto c = static_cast<std::size_t>(p.class_index);
      plan.block_kinds[c] = p.block;
      plan.block_spans[c] = {start, start + static_cast<int>(p.tokens.size())};
      if (p.block == BlockKind::Virtual) {
        for (int i = 0; i + 1 < static_cast<int>(p.tokens.size()); ++i) plan.virtual_positions[c].push_back(start + i);
      }
    } else if (p.kind == PieceKind::Fixed) {
      for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        if (p.tokens[i] == Vocab::kCls && cls_pos < 0) cls_pos = start + static_cast<int>(i);
        if (p.tokens[i] == Vocab::kMask) {
          plan.mask_pos = start + static_cast<int>(i);
          ++masks;
        }
      }
    }
    plan.token_ids.insert(plan.token_ids.end(), p.tokens.begin(), p.tokens.end());
  }
  if (masks > 1) throw Error(ErrorKind::MultipleMask, "rendered plan holds more than one mask");
  plan.cls_pos = std::max(cls_pos, 0);
  plan.attention_length = static_cast<int>(plan.token_ids.size());
  return plan;
}

void check_class(int c, const Verbalizer& verbalizer) {
  if (c < 0 || c >= verbalizer.num_classes()) {
    throw Error(ErrorKind::UnknownLabel, "class index " + std::to_string(c) + " outside the label set");
  }
}

}  // namespace

bool TemplateSpec::is_pair() const {
  return std::any_of(segments.begin(), segments.end(), [](const Segment& s) {
    const auto* slot = std::get_if<InputSlot>(&s);
    return slot != nullptr && slot->which == 2;
  });
}

int TemplateSpec::prompt_length() const {
  int total = 0;
  for (const auto& s : segments) {
    if (const auto* p = std::get_if<PromptSlot>(&s)) total += p->length;
  }
  return total;
}

TemplateSpec parse_template(std::string_view dsl, std::string task_id) {
  TemplateSpec spec{.segments = {}, .task_id = std::move(task_id)};
  std::string literal;
  auto flush = [&] {
    auto text = collapse_whitespace(literal);
    if (!text.empty()) spec.segments.emplace_back(Literal{std::move(text)});
    literal.clear();
  };
  int masks = 0;
  int demo_points = 0;
  for (std::size_t i = 0; i < dsl.size();) {
    const char c = dsl[i];
    if (c == '}' || c == ']') throw Error(ErrorKind::UnbalancedBrace, "unmatched '" + std::string(1, c) + "' at offset " + std::to_string(i));
    if (c != '{' && c != '[') {
      literal.push_back(c);
      ++i;
      continue;
    }
    const char close_char = c == '{' ? '}' : ']';
    const auto close = dsl.find(close_char, i + 1);
    const auto reopen = dsl.find(c, i + 1);
    if (close == std::string_view::npos || (reopen != std::string_view::npos && reopen < close)) {
      throw Error(ErrorKind::UnbalancedBrace, "unclosed '" + std::string(1, c) + "' at offset " + std::to_string(i));
    }
    const std::string_view name = dsl.substr(i + 1, close - i - 1);
    const std::string_view marker = dsl.substr(i, close - i + 1);
    i = close + 1;
    if (c == '{') {
      if (name != "x1" && name != "x2") throw Error(ErrorKind::UnknownSlot, "unknown input slot " + std::string(marker));
      flush();
      spec.segments.emplace_back(InputSlot{name == "x1" ? 1 : 2});
    } else if (name == "CLS" || name == "SEP") {
      literal += marker;
    } else if (name == "MASK") {
      flush();
      spec.segments.emplace_back(MaskSlot{});
      ++masks;
    } else if (name == "VDEMO") {
      flush();
      spec.segments.emplace_back(DemoPoint{});
      ++demo_points;
    } else if (name.starts_with("PROMPT:")) {
      const auto digits = name.substr(7);
      int m = 0;
      const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), m);
      if (ec != std::errc{} || ptr != digits.data() + digits.size() || m <= 0) {
        throw Error(ErrorKind::UnknownSlot, "bad prompt length in " + std::string(marker));
      }
      flush();
      spec.segments.emplace_back(PromptSlot{m});
    } else {
      throw Error(ErrorKind::UnknownSlot, "unknown marker " + std::string(marker));
    }
  }
  flush();
  if (masks == 0) throw Error(ErrorKind::MissingMask, "template has no [MASK]");
  if (masks > 1) throw Error(ErrorKind::MultipleMask, "template has more than one [MASK]");
  if (demo_points > 1) throw Error(ErrorKind::UnknownSlot, "[VDEMO] may appear at most once");
  return spec;
}

std::string format_template(const TemplateSpec& spec) {
  std::string out;
  auto emit = [&](const std::string& piece) {
    if (piece.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out += piece;
  };
  for (const auto& seg : spec.segments) {
    std::visit(Overloaded{
                   [&](const Literal& lit) { emit(lit.text); },
                   [&](const InputSlot& slot) { emit(slot.which == 1 ? "{x1}" : "{x2}"); },
                   [&](const MaskSlot&) { emit("[MASK]"); },
                   [&](const PromptSlot& p) { emit("[PROMPT:" + std::to_string(p.length) + "]"); },
                   [&](const DemoPoint&) { emit("[VDEMO]"); },
                   [&](const VirtualDemoSlot& v) {
                     emit("[VDEMO:" + std::to_string(v.class_index) + ":" + std::to_string(v.length) + "]");
                   },
                   [&](const RealDemoSlot& r) { emit("[DEMO:" + std::to_string(r.class_index) + "]"); },
               },
               seg);
  }
  return out;
}

Verbalizer::Verbalizer(std::vector<std::string> labels, std::vector<std::string> words)
    : labels_(std::move(labels)), words_(std::move(words)) {
  if (labels_.size() != words_.size() || labels_.empty()) {
    throw Error(ErrorKind::InvalidArgument, "verbalizer needs one word per label and at least one label");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    for (std::size_t j = i + 1; j < labels_.size(); ++j) {
      if (labels_[i] == labels_[j]) throw Error(ErrorKind::InvalidArgument, "duplicate label " + labels_[i]);
      if (normalize_text(words_[i]) == normalize_text(words_[j])) {
        throw Error(ErrorKind::InvalidArgument, "verbalizer is not injective: " + words_[i]);
      }
    }
  }
}

int Verbalizer::index_of(std::string_view label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw Error(ErrorKind::UnknownLabel, "label '" + std::string(label) + "' not in the label set");
  return static_cast<int>(it - labels_.begin());
}

std::vector<int> Verbalizer::token_ids(const Vocab& vocab) const {
  std::vector<int> ids;
  ids.reserve(labels_.size());
  for (const auto& label : labels_) ids.push_back(label_word_id(*this, label, vocab));
  return ids;
}

std::vector<int> TokenPlan::all_virtual_positions() const {
  std::vector<int> out;
  for (const auto& group : virtual_positions) out.insert(out.end(), group.begin(), group.end());
  return out;
}

TemplateSpec expand_demonstrations(const TemplateSpec& spec, std::vector<Segment> blocks, Placement placement) {
  TemplateSpec out{.segments = {}, .task_id = spec.task_id};
  const auto point = std::find_if(spec.segments.begin(), spec.segments.end(),
                                  [](const Segment& s) { return std::holds_alternative<DemoPoint>(s); });
  if (point != spec.segments.end()) {
    out.segments.assign(spec.segments.begin(), point);
    out.segments.insert(out.segments.end(), blocks.begin(), blocks.end());
    out.segments.insert(out.segments.end(), std::next(point), spec.segments.end());
    return out;
  }
  out.segments = spec.segments;
  if (placement == Placement::Before) {
    for (auto it = out.segments.rbegin(); it != out.segments.rend(); ++it) {
      auto* lit = std::get_if<Literal>(&*it);
      if (lit == nullptr) continue;
      const auto at = lit->text.rfind("[SEP]");
      if (at == std::string::npos) continue;
      const auto idx = std::distance(out.segments.begin(), it.base()) - 1;
      Literal head{collapse_whitespace(lit->text.substr(0, at))};
      Literal tail{collapse_whitespace(lit->text.substr(at))};
      out.segments.erase(out.segments.begin() + idx);
      std::vector<Segment> middle;
      if (!head.text.empty()) middle.emplace_back(std::move(head));
      middle.insert(middle.end(), blocks.begin(), blocks.end());
      middle.emplace_back(std::move(tail));
      out.segments.insert(out.segments.begin() + idx, middle.begin(), middle.end());
      return out;
    }
  }
  out.segments.insert(out.segments.end(), blocks.begin(), blocks.end());
  return out;
}

TokenPlan render_anchor(const TemplateSpec& spec, const LabeledText& example, const Vocab& vocab,
                        const RenderOptions& opts) {
  auto plan = assemble(render_pieces(base_of(spec), {.example = &example}, nullptr, vocab), 0, opts);
  if (!plan.has_mask()) throw Error(ErrorKind::MissingMask, "anchor plan has no mask");
  return plan;
}

TokenPlan render_demonstration(const TemplateSpec& spec, const LabeledText& demo, const Verbalizer& verbalizer,
                               const Vocab& vocab, const RenderOptions& opts) {
  RenderInputs in{.example = &demo, .mask_word = label_word_id(verbalizer, demo.label, vocab)};
  return assemble(render_pieces(base_of(spec), in, &verbalizer, vocab), 0, opts);
}

TokenPlan build_demo_augmented(const TemplateSpec& spec, const LabeledText& example,
                               const std::vector<LabeledText>& demos, const Verbalizer& verbalizer,
                               const Vocab& vocab, const RenderOptions& opts) {
  if (static_cast<int>(demos.size()) != verbalizer.num_classes()) {
    throw Error(ErrorKind::InvalidArgument, "need exactly one demonstration per class");
  }
  std::vector<Segment> blocks;
  for (int c = 0; c < verbalizer.num_classes(); ++c) {
    if (verbalizer.index_of(demos[static_cast<std::size_t>(c)].label) != c) {
      throw Error(ErrorKind::UnknownLabel, "demonstration " + std::to_string(c) + " is not of class " + verbalizer.labels()[static_cast<std::size_t>(c)]);
    }
    blocks.emplace_back(RealDemoSlot{c, demos[static_cast<std::size_t>(c)]});
  }
  const auto expanded = expand_demonstrations(base_of(spec), std::move(blocks), opts.placement);
  return assemble(render_pieces(expanded, {.example = &example}, &verbalizer, vocab), verbalizer.num_classes(), opts);
}

TokenPlan build_virtual(const TemplateSpec& spec, const LabeledText& example, int n, const Verbalizer& verbalizer,
                        const Vocab& vocab, const RenderOptions& opts) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "virtual demonstration length must be at least 1");
  std::vector<Segment> blocks;
  for (int c = 0; c < verbalizer.num_classes(); ++c) blocks.emplace_back(VirtualDemoSlot{c, n});
  const auto expanded = expand_demonstrations(base_of(spec), std::move(blocks), opts.placement);
  return assemble(render_pieces(expanded, {.example = &example}, &verbalizer, vocab), verbalizer.num_classes(), opts);
}

TokenPlan build_positive(const TemplateSpec& spec, const LabeledText& example, const LabeledText& demo,
                         int replaced_class, int n, const Verbalizer& verbalizer, const Vocab& vocab,
                         const RenderOptions& opts) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "virtual demonstration length must be at least 1");
  check_class(replaced_class, verbalizer);
  if (verbalizer.index_of(demo.label) != replaced_class) {
    throw Error(ErrorKind::UnknownLabel, "demonstration label '" + demo.label + "' does not match the replaced class");
  }
  std::vector<Segment> blocks;
  for (int c = 0; c < verbalizer.num_classes(); ++c) {
    if (c == replaced_class) {
      blocks.emplace_back(RealDemoSlot{c, demo});
    } else {
      blocks.emplace_back(VirtualDemoSlot{c, n});
    }
  }
  const auto expanded = expand_demonstrations(base_of(spec), std::move(blocks), opts.placement);
  return assemble(render_pieces(expanded, {.example = &example}, &verbalizer, vocab), verbalizer.num_classes(), opts);
}

TokenPlan render_plain(const LabeledText& example, const Vocab& vocab, const RenderOptions& opts) {
  std::vector<Piece> pieces;
  pieces.push_back({.kind = PieceKind::Fixed, .tokens = {Vocab::kCls}});
  pieces.push_back({.kind = PieceKind::Input, .tokens = tokenize_input(example.text_a, vocab)});
  pieces.push_back({.kind = PieceKind::Fixed, .tokens = {Vocab::kSep}});
  if (example.text_b) {
    pieces.push_back({.kind = PieceKind::Input, .tokens = tokenize_input(*example.text_b, vocab)});
    pieces.push_back({.kind = PieceKind::Fixed, .tokens = {Vocab::kSep}});
  }
  return assemble(std::move(pieces), 0, opts);
}

std::string render_text(const TemplateSpec& spec, const LabeledText& example, const std::optional<std::string>& label_word) {
  std::string out;
  auto emit = [&](std::string_view piece) {
    const auto text = collapse_whitespace(piece);
    if (text.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out += text;
  };
  for (const auto& seg : base_of(spec).segments) {
    std::visit(Overloaded{
                   [&](const Literal& lit) { emit(lit.text); },
                   [&](const InputSlot& slot) {
                     if (slot.which == 1) {
                       emit(example.text_a);
                     } else {
                       if (!example.text_b) throw Error(ErrorKind::InvalidArgument, "template needs {x2}");
                       emit(*example.text_b);
                     }
                   },
                   [&](const MaskSlot&) { emit(label_word ? *label_word : std::string("[MASK]")); },
                   [&](const PromptSlot& p) {
                     for (int i = 0; i < p.length; ++i) emit("[P]");
                   },
                   [](const auto&) {},
               },
               seg);
  }
  return out;
}

}  // namespace demotune
