#include "demotune/vocab.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "demotune/error.hpp"

namespace demotune {

namespace {

constexpr std::array<std::string_view, Vocab::kNumSpecials> kSpecialNames = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[P]", "[V]"};

}  // namespace

Vocab::Vocab() {
  for (auto name : kSpecialNames) {
    index_.emplace(std::string(name), static_cast<int>(tokens_.size()));
    tokens_.emplace_back(name);
  }
}

bool Vocab::is_special_token(std::string_view token) {
  return std::find(kSpecialNames.begin(), kSpecialNames.end(), token) != kSpecialNames.end();
}

std::vector<std::string> Vocab::split(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      const auto close = text.find(']', i);
      if (close != std::string_view::npos && is_special_token(text.substr(i, close - i + 1))) {
        flush();
        out.emplace_back(text.substr(i, close - i + 1));
        i = close + 1;
        continue;
      }
    }
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
    ++i;
  }
  flush();
  return out;
}

Vocab Vocab::build(std::span<const std::string> texts, int min_freq) {
  std::map<std::string, long> counts;
  for (const auto& text : texts) {
    for (auto& tok : split(text)) {
      if (!is_special_token(tok)) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (auto& [tok, count] : ranked) {
    if (count < min_freq) continue;
    vocab.index_.emplace(tok, static_cast<int>(vocab.tokens_.size()));
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecials) throw Error(ErrorKind::ParseError, "vocabulary shorter than the special block");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (tokens[i] != kSpecialNames[i]) throw Error(ErrorKind::ParseError, "vocabulary special block mismatch at " + tokens[i]);
  }
  Vocab vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  for (auto& tok : tokens) {
    if (!vocab.index_.emplace(tok, static_cast<int>(vocab.tokens_.size())).second) {
      throw Error(ErrorKind::ParseError, "duplicate vocabulary entry " + tok);
    }
    vocab.tokens_.push_back(std::move(tok));
  }
  return vocab;
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error(ErrorKind::InvalidArgument, "token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : split(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& tok : Vocab::split(text)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace demotune
