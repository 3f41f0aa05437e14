#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace demotune {

// Whitespace tokenizer with a frequency-ordered vocabulary. Normalisation
// lowercases ASCII letters and splits punctuation into standalone tokens;
// bracketed specials such as [CLS] are kept verbatim.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kPrompt = 5;   // placeholder for continuous prompt positions
  static constexpr int kVirtual = 6;  // placeholder for virtual demonstration positions
  static constexpr int kNumSpecials = 7;

  Vocab();

  // Specials first, then words by descending frequency (ties lexicographic).
  static Vocab build(std::span<const std::string> texts, int min_freq = 1);
  static Vocab from_tokens(std::vector<std::string> tokens);

  static std::vector<std::string> split(std::string_view text);
  static bool is_special_token(std::string_view token);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  const std::string& token(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Normalised form of text: split tokens joined by single spaces.
std::string normalize_text(std::string_view text);

}  // namespace demotune
